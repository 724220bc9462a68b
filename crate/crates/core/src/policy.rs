//! Token scoring and keep/drop policies.
//!
//! All index lists in this module are *patch* indices: position `t` refers to
//! token `t + 1` of the live sequence, because the class token at index 0 is
//! never scored, never pruned and never a match candidate.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gelu, layernorm, linear, softmax_in_place, Matrix};
use crate::vit::{AttentionRecord, ScoreHeadWeights, LAYERNORM_EPS};

/// Which scoring scheme drives the partition, and where it sits in the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Learned score head, applied before the block.
    Dtps,
    /// Class-token attention, applied inside the block after attention.
    Etps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilaritySource {
    Cosine,
    PreviousAttention,
}

/// Which part of each token's embedding is compared during matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureType {
    /// The token as it flows through the network.
    Full,
    /// Token minus its positional embedding.
    Content,
    /// Positional embedding only.
    Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    /// 1-based block indices, strictly increasing.
    pub locations: Vec<usize>,
    pub keep_ratio: f64,
    pub variant: Variant,
    pub similarity_source: SimilaritySource,
    pub feature_type: FeatureType,
    pub rng_seed: u64,
}

impl PruneSchedule {
    pub fn new(locations: Vec<usize>, keep_ratio: f64, variant: Variant) -> Result<Self> {
        let schedule = Self {
            locations,
            keep_ratio,
            variant,
            similarity_source: SimilaritySource::Cosine,
            feature_type: FeatureType::Full,
            rng_seed: 0,
        };
        schedule.validate_shape()?;
        Ok(schedule)
    }

    /// A schedule with no pruning stages.
    pub fn none() -> Self {
        Self {
            locations: Vec::new(),
            keep_ratio: 1.0,
            variant: Variant::Etps,
            similarity_source: SimilaritySource::Cosine,
            feature_type: FeatureType::Full,
            rng_seed: 0,
        }
    }

    /// Parses location lists like `"4,7,10"` or `"4-7-10"`.
    pub fn parse_locations(text: &str) -> Result<Vec<usize>> {
        text.split([',', '-', '/'])
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad pruning location {s:?}")))
            })
            .collect()
    }

    fn validate_shape(&self) -> Result<()> {
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "keep ratio must lie in (0, 1], got {}",
                self.keep_ratio
            )));
        }
        if self.locations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "pruning locations must be strictly increasing, got {:?}",
                self.locations
            )));
        }
        Ok(())
    }

    /// Checks the schedule against a model of the given depth.
    pub fn validate(&self, depth: usize) -> Result<()> {
        self.validate_shape()?;
        if let Some(&bad) = self.locations.iter().find(|&&l| l == 0 || l > depth) {
            return Err(Error::Config(format!(
                "pruning location {bad} outside blocks 1..={depth}"
            )));
        }
        if self.variant == Variant::Dtps
            && self.similarity_source == SimilaritySource::PreviousAttention
            && self.locations.first() == Some(&1)
        {
            return Err(Error::Config(
                "a dTPS stage at block 1 has no previous attention to reuse".into(),
            ));
        }
        Ok(())
    }

    pub fn stage_at(&self, block: usize) -> Option<usize> {
        self.locations.iter().position(|&l| l == block)
    }
}

/// Reserved patch-token count for a stage: `floor(ρ·n)`, at least 1.
pub fn keep_count(live_patches: usize, keep_ratio: f64) -> usize {
    if live_patches == 0 {
        return 0;
    }
    // The epsilon absorbs representation error in products like 0.29 * 100.
    let kept = (keep_ratio * live_patches as f64 + 1e-9).floor() as usize;
    kept.clamp(1, live_patches)
}

/// Patch-token counts after each of `stages` successive top-k stages.
pub fn patch_schedule(initial_patches: usize, stages: usize, keep_ratio: f64) -> Vec<usize> {
    let mut counts = Vec::with_capacity(stages);
    let mut live = initial_patches;
    for _ in 0..stages {
        live = keep_count(live, keep_ratio);
        counts.push(live);
    }
    counts
}

/// Per patch-token importance, higher means more worth keeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub Vec<f32>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPartition {
    pub stage: usize,
    /// Reserved patch indices, ascending.
    pub reserved: Vec<usize>,
    /// Pruned patch indices, ascending.
    pub pruned: Vec<usize>,
}

impl TokenPartition {
    pub fn live_patches(&self) -> usize {
        self.reserved.len() + self.pruned.len()
    }

    /// Sequence indices of every surviving token, class token first.
    pub fn reserved_tokens(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.reserved.iter().map(|&p| p + 1))
            .collect()
    }

    pub fn pruned_tokens(&self) -> Vec<usize> {
        self.pruned.iter().map(|&p| p + 1).collect()
    }

    /// Keeps every patch token.
    pub fn keep_all(live_patches: usize, stage: usize) -> Self {
        Self {
            stage,
            reserved: (0..live_patches).collect(),
            pruned: Vec::new(),
        }
    }

    fn from_reserved(mut reserved: Vec<usize>, live_patches: usize, stage: usize) -> Self {
        reserved.sort_unstable();
        let mut is_reserved = vec![false; live_patches];
        for &r in &reserved {
            is_reserved[r] = true;
        }
        let pruned = (0..live_patches).filter(|&i| !is_reserved[i]).collect();
        Self {
            stage,
            reserved,
            pruned,
        }
    }
}

/// Binary keep indicator over patch tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionMask(pub Vec<bool>);

impl DecisionMask {
    pub fn all(len: usize) -> Self {
        Self(vec![true; len])
    }

    pub fn from_partition(p: &TokenPartition) -> Self {
        let mut keep = vec![false; p.live_patches()];
        for &r in &p.reserved {
            keep[r] = true;
        }
        Self(keep)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.0.iter().filter(|&&k| k).count()
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()
    }
}

/// Class-token attention averaged over heads, one score per patch token.
pub fn score_etps(attn: &AttentionRecord) -> ScoreVector {
    let n = attn.tokens();
    let heads = attn.attention.len() as f64;
    let scores = (1..n)
        .map(|t| {
            let total: f64 = attn.attention.iter().map(|a| a.get(0, t) as f64).sum();
            (total / heads) as f32
        })
        .collect();
    ScoreVector(scores)
}

/// Keep-probability from the learned two-branch head.
///
/// `tokens` includes the class token at row 0. `live` covers patch tokens
/// only and selects which of them contribute to the global (mean) branch.
pub fn score_dtps(
    tokens: &Matrix,
    live: &DecisionMask,
    head: &ScoreHeadWeights,
) -> Result<ScoreVector> {
    let patches = tokens.rows().saturating_sub(1);
    if live.len() != patches {
        return Err(Error::shape("score_dtps live mask", patches, live.len()));
    }
    let patch_rows: Vec<usize> = (1..tokens.rows()).collect();
    let x = crate::numerics::gather_rows(tokens, &patch_rows)?;
    let normed = layernorm(&x, &head.norm.gamma, &head.norm.beta, LAYERNORM_EPS)?;
    let local = gelu(&linear(&normed, &head.local.weight, &head.local.bias)?);

    let width = local.cols();
    let mut global = vec![0.0f64; width];
    let live_count = live.kept();
    for (row, _) in local.iter_rows().zip(&live.0).filter(|(_, &k)| k) {
        for (g, &v) in global.iter_mut().zip(row) {
            *g += v as f64;
        }
    }
    let denom = live_count.max(1) as f64;
    let global: Vec<f32> = global.iter().map(|g| (g / denom) as f32).collect();
    let global = Matrix::new(
        patches,
        width,
        global.iter().copied().cycle().take(patches * width).collect(),
    )?;

    let joint = local.hconcat(&global)?;
    let hidden = gelu(&linear(&joint, &head.hidden.weight, &head.hidden.bias)?);
    let mut logits = linear(&hidden, &head.out.weight, &head.out.bias)?;
    for i in 0..logits.rows() {
        softmax_in_place(logits.row_mut(i), 1.0);
    }
    // Column 0 is the keep class.
    Ok(ScoreVector(logits.iter_rows().map(|r| r[0]).collect()))
}

/// One relaxed keep/drop draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelDecision {
    /// Relaxed keep weight, `softmax((logit + noise) / τ)[keep]`.
    pub soft_keep: f64,
    pub keep: bool,
}

/// Straight-through forward: relaxed two-way softmax and its hard argmax.
/// Ties go to keep.
pub fn gumbel_softmax_hard(
    keep_logit: f64,
    drop_logit: f64,
    noise: [f64; 2],
    temperature: f64,
) -> GumbelDecision {
    let a = keep_logit + noise[0];
    let b = drop_logit + noise[1];
    let keep = a >= b;
    let diff = (b - a) / temperature;
    let soft_keep = if diff.is_nan() {
        if keep {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 / (1.0 + diff.exp())
    };
    GumbelDecision { soft_keep, keep }
}

/// `-ln(-ln u)` with `u` drawn from the open interval (0, 1).
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

/// Deterministic generator for a (seed, stage) pair.
pub fn stage_rng(seed: u64, stage: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng
}

/// Samples a hard mask from keep-probabilities with Gumbel noise.
pub fn gumbel_sample(
    scores: &ScoreVector,
    temperature: f64,
    seed: u64,
    stage: usize,
) -> Result<DecisionMask> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut rng = stage_rng(seed, stage);
    let keep = scores
        .0
        .iter()
        .map(|&p| {
            let p = (p as f64).clamp(f64::MIN_POSITIVE, 1.0);
            let q = (1.0 - p).max(f64::MIN_POSITIVE);
            let noise = [gumbel_noise(&mut rng), gumbel_noise(&mut rng)];
            gumbel_softmax_hard(p.ln(), q.ln(), noise, temperature).keep
        })
        .collect();
    Ok(DecisionMask(keep))
}

/// Top-k split of the live patch tokens. Ties go to the lower index.
pub fn topk_partition(scores: &ScoreVector, keep_ratio: f64, stage: usize) -> TokenPartition {
    let n = scores.len();
    let k = keep_count(n, keep_ratio);
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps lower indices first among equal scores.
    order.sort_by(|&a, &b| {
        scores.0[b]
            .partial_cmp(&scores.0[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order.truncate(k);
    TokenPartition::from_reserved(order, n, stage)
}

/// Swaps reserved and pruned patch tokens. The class token is unaffected.
pub fn reverse_policy(p: &TokenPartition) -> TokenPartition {
    TokenPartition {
        stage: p.stage,
        reserved: p.pruned.clone(),
        pruned: p.reserved.clone(),
    }
}

/// Uniformly random reserved subset with the same cardinality as top-k.
pub fn random_policy(
    live_patches: usize,
    keep_ratio: f64,
    seed: u64,
    stage: usize,
) -> TokenPartition {
    let k = keep_count(live_patches, keep_ratio);
    let mut rng = stage_rng(seed, stage);
    let reserved = sample(&mut rng, live_patches, k).into_vec();
    TokenPartition::from_reserved(reserved, live_patches, stage)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonusAccuracy {
    pub acc_original: f64,
    pub acc_reversed: f64,
    /// Fraction of samples only the reversed policy gets right.
    pub bonus: f64,
}

pub fn bonus_accuracy<T: PartialEq>(
    original: &[T],
    reversed: &[T],
    labels: &[T],
) -> Result<BonusAccuracy> {
    if original.len() != labels.len() || reversed.len() != labels.len() {
        return Err(Error::Input(format!(
            "prediction/label lengths differ: original {}, reversed {}, labels {}",
            original.len(),
            reversed.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Input("no labelled samples".into()));
    }
    let n = labels.len() as f64;
    let mut orig_ok = 0usize;
    let mut rev_ok = 0usize;
    let mut exclusive = 0usize;
    for ((o, r), l) in original.iter().zip(reversed).zip(labels) {
        let o_ok = o == l;
        let r_ok = r == l;
        orig_ok += o_ok as usize;
        rev_ok += r_ok as usize;
        exclusive += (r_ok && !o_ok) as usize;
    }
    Ok(BonusAccuracy {
        acc_original: orig_ok as f64 / n,
        acc_reversed: rev_ok as f64 / n,
        bonus: exclusive as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::{LayerNormWeights, LinearWeights};
    use proptest::prelude::*;
    use rand::Rng;

    fn record_with_class_rows(rows: &[Vec<f32>]) -> AttentionRecord {
        let n = rows[0].len();
        let attention = rows
            .iter()
            .map(|r| {
                let mut m = Matrix::filled(n, n, 1.0 / n as f32);
                m.row_mut(0).copy_from_slice(r);
                m
            })
            .collect();
        AttentionRecord::from_attention(attention)
    }

    #[test]
    fn etps_uniform_attention() {
        let rec = record_with_class_rows(&[vec![0.25; 4], vec![0.25; 4]]);
        assert_eq!(score_etps(&rec).0, vec![0.25; 3]);
    }

    #[test]
    fn etps_one_hot_class_row() {
        // Token 3 of the sequence is patch 2.
        let row = vec![0.0, 0.0, 0.0, 1.0, 0.0];
        let rec = record_with_class_rows(&[row.clone(), row.clone(), row]);
        assert_eq!(score_etps(&rec).0, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn etps_head_mean() {
        // Class rows over [cls, p0, p1]; the class column is irrelevant here.
        let rec = record_with_class_rows(&[vec![0.0, 0.2, 0.8], vec![0.0, 0.6, 0.4]]);
        let s = score_etps(&rec).0;
        assert!((s[0] - 0.4).abs() < 1e-7 && (s[1] - 0.6).abs() < 1e-7);
    }

    fn zero_head(d: usize) -> ScoreHeadWeights {
        ScoreHeadWeights::zeros(d)
    }

    #[test]
    fn dtps_zero_weights_give_one_half() {
        let x = Matrix::filled(5, 8, 0.3);
        let s = score_dtps(&x, &DecisionMask::all(4), &zero_head(8)).unwrap();
        assert!(s.0.iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn dtps_single_live_token_global_equals_local() {
        // With one live patch, the mean branch is that patch's projection, so
        // a head reading only the global half scores it exactly like a head
        // reading only the local half.
        let d = 4;
        let mut rng = stage_rng(5, 0);
        let x = Matrix::new(3, d, (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut local_only = ScoreHeadWeights::zeros(d);
        local_only.norm = LayerNormWeights::ones(d);
        local_only.local = LinearWeights::new(
            Matrix::new(d, d / 2, (0..d * d / 2).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap(),
            vec![0.1, -0.2],
        );
        let mut global_only = local_only.clone();
        // hidden: [local | global] (d) -> d/2; out: d/2 -> 2
        let mut h_local = Matrix::zeros(d, d / 2);
        let mut h_global = Matrix::zeros(d, d / 2);
        for j in 0..d / 2 {
            h_local.set(j, j, 1.0);
            h_global.set(d / 2 + j, j, 1.0);
        }
        local_only.hidden = LinearWeights::new(h_local, vec![0.0; d / 2]);
        global_only.hidden = LinearWeights::new(h_global, vec![0.0; d / 2]);
        let out = LinearWeights::new(Matrix::from_rows(&[[1.0, 0.0], [0.5, -1.0]]).unwrap(), vec![0.0, 0.0]);
        local_only.out = out.clone();
        global_only.out = out;

        let live = DecisionMask(vec![false, true]);
        let a = score_dtps(&x, &live, &local_only).unwrap();
        let b = score_dtps(&x, &live, &global_only).unwrap();
        assert!((a.0[1] - b.0[1]).abs() < 1e-7);
    }

    #[test]
    fn dtps_shape_error() {
        let x = Matrix::zeros(5, 8);
        assert!(score_dtps(&x, &DecisionMask::all(3), &zero_head(8)).is_err());
    }

    #[test]
    fn gumbel_zero_noise_strong_keep() {
        let d = gumbel_softmax_hard(10.0, -10.0, [0.0, 0.0], 1.0);
        assert!(d.keep);
        assert!(d.soft_keep > 0.999);
    }

    #[test]
    fn gumbel_cold_limit_is_argmax() {
        for (k, dr, n) in [(0.2, 0.5, [0.4, 0.0]), (0.2, 0.5, [0.0, 0.4]), (-1.0, 1.0, [1.5, -0.3])] {
            let d = gumbel_softmax_hard(k, dr, n, 1e-9);
            let expect = k + n[0] >= dr + n[1];
            assert_eq!(d.keep, expect);
            assert_eq!(d.soft_keep.round() as u8, expect as u8);
        }
    }

    #[test]
    fn gumbel_rejects_non_positive_temperature() {
        assert!(gumbel_sample(&ScoreVector(vec![0.5]), 0.0, 1, 0).is_err());
    }

    #[test]
    fn gumbel_is_reproducible_per_stage() {
        let s = ScoreVector(vec![0.5; 64]);
        let a = gumbel_sample(&s, 1.0, 11, 2).unwrap();
        assert_eq!(a, gumbel_sample(&s, 1.0, 11, 2).unwrap());
        assert_ne!(a, gumbel_sample(&s, 1.0, 11, 3).unwrap());
    }

    #[test]
    fn topk_basic() {
        let p = topk_partition(&ScoreVector(vec![0.9, 0.1, 0.5, 0.7]), 0.5, 0);
        assert_eq!(p.reserved, vec![0, 3]);
        assert_eq!(p.pruned, vec![1, 2]);
        assert_eq!(p.reserved_tokens(), vec![0, 1, 4]);
    }

    #[test]
    fn topk_tie_prefers_lower_index() {
        // keep ratio 0.34 of 3 tokens keeps one.
        let p = topk_partition(&ScoreVector(vec![0.5, 0.5, 0.1]), 0.34, 0);
        assert_eq!(p.reserved, vec![0]);
    }

    #[test]
    fn floor_recurrence() {
        assert_eq!(patch_schedule(196, 3, 0.7), vec![137, 95, 66]);
        assert_eq!(patch_schedule(196, 3, 0.5), vec![98, 49, 24]);
        assert_eq!(keep_count(1, 0.1), 1);
        assert_eq!(keep_count(100, 0.29), 29);
    }

    #[test]
    fn reverse_swaps_and_is_involution() {
        let p = TokenPartition {
            stage: 0,
            reserved: vec![0, 3],
            pruned: vec![1, 2],
        };
        let r = reverse_policy(&p);
        assert_eq!(r.reserved, vec![1, 2]);
        assert_eq!(r.pruned, vec![0, 3]);
        assert_eq!(r.reserved_tokens()[0], 0);
        assert_eq!(reverse_policy(&r), p);
    }

    #[test]
    fn random_policy_full_keep() {
        for seed in 0..5 {
            let p = random_policy(7, 1.0, seed, 0);
            assert_eq!(p.reserved, (0..7).collect::<Vec<_>>());
            assert!(p.pruned.is_empty());
        }
    }

    #[test]
    fn random_policy_deterministic() {
        assert_eq!(random_policy(50, 0.3, 9, 1), random_policy(50, 0.3, 9, 1));
    }

    #[test]
    fn random_policy_is_uniform() {
        let trials = 10_000;
        let mut hits = [0usize; 4];
        for t in 0..trials {
            for r in random_policy(4, 0.5, t as u64, 0).reserved {
                hits[r] += 1;
            }
        }
        for h in hits {
            let f = h as f64 / trials as f64;
            assert!((f - 0.5).abs() <= 0.02, "frequency {f}");
        }
    }

    #[test]
    fn bonus_cases() {
        let b = bonus_accuracy(&[1, 2, 3], &[1, 2, 3], &[1, 0, 3]).unwrap();
        assert_eq!(b.bonus, 0.0);
        let b = bonus_accuracy(&['A', 'B'], &['B', 'B'], &['B', 'B']).unwrap();
        assert_eq!(b.bonus, 0.5);
        let b = bonus_accuracy(&[1, 2], &[0, 0], &[1, 2]).unwrap();
        assert_eq!((b.acc_original, b.bonus), (1.0, 0.0));
        assert!(bonus_accuracy(&[1], &[1, 2], &[1]).is_err());
    }

    #[test]
    fn bonus_four_sample_enumeration() {
        // sample: orig ok, rev ok
        // 0: yes yes; 1: no yes (bonus); 2: no no; 3: yes no
        let labels = [3, 1, 4, 1];
        let orig = [3, 0, 0, 1];
        let rev = [3, 1, 0, 2];
        let b = bonus_accuracy(&orig, &rev, &labels).unwrap();
        assert_eq!(b.acc_original, 0.5);
        assert_eq!(b.acc_reversed, 0.5);
        assert_eq!(b.bonus, 0.25);
    }

    #[test]
    fn schedule_validation() {
        let s = PruneSchedule::new(vec![4, 7, 10], 0.7, Variant::Etps).unwrap();
        assert!(s.validate(12).is_ok());
        assert!(s.validate(9).is_err());
        assert!(PruneSchedule::new(vec![4, 4], 0.7, Variant::Etps).is_err());
        assert!(PruneSchedule::new(vec![4], 0.0, Variant::Etps).is_err());
        assert!(PruneSchedule::new(vec![4], 1.5, Variant::Etps).is_err());
        assert_eq!(PruneSchedule::parse_locations("4-7-10").unwrap(), vec![4, 7, 10]);
        assert_eq!(PruneSchedule::parse_locations("3,5,7,9").unwrap(), vec![3, 5, 7, 9]);
    }

    proptest! {
        #[test]
        fn topk_invariant_under_monotone_transform(scores in proptest::collection::vec(-5.0f32..5.0, 1..40), ratio in 0.05f64..=1.0) {
            let a = topk_partition(&ScoreVector(scores.clone()), ratio, 0);
            let transformed: Vec<f32> = scores.iter().map(|&s| (2.0 * s + 1.0).exp()).collect();
            let b = topk_partition(&ScoreVector(transformed), ratio, 0);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn partition_cardinality_depends_only_on_count(scores in proptest::collection::vec(0.0f32..1.0, 1..60), ratio in 0.05f64..=1.0, seed in any::<u64>()) {
            let n = scores.len();
            let p = topk_partition(&ScoreVector(scores), ratio, 0);
            let r = random_policy(n, ratio, seed, 0);
            prop_assert_eq!(p.reserved.len(), keep_count(n, ratio));
            prop_assert_eq!(r.reserved.len(), keep_count(n, ratio));
            for part in [p, r] {
                let mut all: Vec<usize> = part.reserved.iter().chain(&part.pruned).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }
    }
}

//! Token squeezing: nearest-neighbour matching of pruned tokens onto reserved
//! hosts and exp-similarity weighted fusing, plus the drop and
//! aggregate-to-one baselines.
//!
//! Matching is unidirectional and many-to-one. Each pruned token `i` picks
//! the reserved token `j` maximizing `c[i][j]`; any number of pruned tokens
//! may share a host and some reserved tokens receive none. A host's update is
//!
//! ```text
//! y_j = (e · x_j + Σ_{i→j} exp(c_ij) · x_i) / (e + Σ_{i→j} exp(c_ij))
//! ```
//!
//! where `e = exp(1)` stands for the host's similarity to itself. Reserved
//! tokens that host nothing pass through bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gather_rows, l2_norm, Matrix};
use crate::policy::{FeatureType, ScoreVector, SimilaritySource, TokenPartition};
use crate::vit::AttentionRecord;

/// Host self-similarity weight, `exp(1)`.
pub const SELF_WEIGHT: f64 = std::f64::consts::E;

/// `[N^p, N^r]` similarities between pruned (rows) and reserved (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Matrix,
    /// Tokens with zero norm under cosine; their rows/columns are 0.
    pub zero_norm_tokens: usize,
}

impl SimilarityMatrix {
    pub fn pruned(&self) -> usize {
        self.values.rows()
    }

    pub fn reserved(&self) -> usize {
        self.values.cols()
    }
}

/// Matching result: `hosts[i]` is the reserved column hosting pruned row `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub hosts: Vec<usize>,
    pub reserved: usize,
}

impl MatchResult {
    /// Dense binary mask `M[i][j] = 1 ⇔ hosts[i] = j`.
    pub fn mask(&self) -> Matrix {
        let mut m = Matrix::zeros(self.hosts.len(), self.reserved);
        for (i, &j) in self.hosts.iter().enumerate() {
            m.set(i, j, 1.0);
        }
        m
    }

    /// Number of pruned tokens assigned to each reserved token.
    pub fn host_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.reserved];
        for &j in &self.hosts {
            h[j] += 1;
        }
        h
    }
}

/// One side of the matching problem.
#[derive(Debug, Clone, Copy)]
pub struct TokenSet<'a> {
    pub features: &'a Matrix,
    pub positional: Option<&'a Matrix>,
    /// Row of each token in the attention record, for attention reuse.
    pub token_indices: &'a [usize],
}

/// Picks the feature used for matching.
pub fn select_features(
    x: &Matrix,
    positional: Option<&Matrix>,
    feature_type: FeatureType,
) -> Result<Matrix> {
    let need_pos = || {
        positional
            .ok_or_else(|| Error::Input(format!("{feature_type:?} features need positional embeddings")))
    };
    match feature_type {
        FeatureType::Full => Ok(x.clone()),
        FeatureType::Content => {
            let p = need_pos()?;
            x.add(&p.scale(-1.0))
        }
        FeatureType::Position => Ok(need_pos()?.clone()),
    }
}

/// `c[i][j] = ⟨x_i, x_j⟩ / (‖x_i‖ ‖x_j‖)`; zero-norm tokens score 0.
pub fn cosine_similarity(pruned: &Matrix, reserved: &Matrix) -> Result<SimilarityMatrix> {
    if pruned.cols() != reserved.cols() && pruned.rows() > 0 && reserved.rows() > 0 {
        return Err(Error::shape("cosine_similarity", reserved.cols(), pruned.cols()));
    }
    let pn: Vec<f64> = pruned.iter_rows().map(l2_norm).collect();
    let rn: Vec<f64> = reserved.iter_rows().map(l2_norm).collect();
    let zero_norm_tokens = pn.iter().chain(&rn).filter(|&&n| n == 0.0).count();
    let mut values = Matrix::zeros(pruned.rows(), reserved.rows());
    for (i, a) in pruned.iter_rows().enumerate() {
        for (j, b) in reserved.iter_rows().enumerate() {
            let denom = pn[i] * rn[j];
            let c = if denom > 0.0 {
                (crate::numerics::dot(a, b) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            values.set(i, j, c as f32);
        }
    }
    Ok(SimilarityMatrix {
        values,
        zero_norm_tokens,
    })
}

/// Head-mean attention from each pruned row to each reserved column.
pub fn attention_similarity(
    attn: &AttentionRecord,
    pruned_tokens: &[usize],
    reserved_tokens: &[usize],
) -> Result<SimilarityMatrix> {
    let n = attn.tokens();
    if let Some(&bad) = pruned_tokens.iter().chain(reserved_tokens).find(|&&t| t >= n) {
        return Err(Error::Input(format!(
            "token {bad} outside the {n}-token attention record"
        )));
    }
    let mut values = Matrix::zeros(pruned_tokens.len(), reserved_tokens.len());
    for (i, &p) in pruned_tokens.iter().enumerate() {
        for (j, &r) in reserved_tokens.iter().enumerate() {
            values.set(i, j, attn.head_mean(p, r));
        }
    }
    Ok(SimilarityMatrix {
        values,
        zero_norm_tokens: 0,
    })
}

pub fn similarity(
    pruned: TokenSet<'_>,
    reserved: TokenSet<'_>,
    source: SimilaritySource,
    feature_type: FeatureType,
    attn: Option<&AttentionRecord>,
) -> Result<SimilarityMatrix> {
    match source {
        SimilaritySource::Cosine => {
            let p = select_features(pruned.features, pruned.positional, feature_type)?;
            let r = select_features(reserved.features, reserved.positional, feature_type)?;
            cosine_similarity(&p, &r)
        }
        SimilaritySource::PreviousAttention => {
            let attn = attn.ok_or_else(|| {
                Error::Input("previous-attention similarity without an attention record".into())
            })?;
            attention_similarity(attn, pruned.token_indices, reserved.token_indices)
        }
    }
}

/// Row-wise argmax; ties go to the lowest reserved index.
pub fn match_tokens(c: &SimilarityMatrix) -> Result<MatchResult> {
    let reserved = c.reserved();
    if reserved == 0 && c.pruned() > 0 {
        return Err(Error::Input("no reserved token to host pruned tokens".into()));
    }
    let hosts = c
        .values
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    Ok(MatchResult { hosts, reserved })
}

/// Fusing weights for every host and every pruned token.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    /// `w_j` per reserved token; exactly 1 for tokens hosting nothing.
    pub host: Vec<f64>,
    /// `w_i` per pruned token, relative to its own host.
    pub pruned: Vec<f64>,
}

pub fn fusion_weights(c: &SimilarityMatrix, m: &MatchResult) -> FusionWeights {
    let mut denom = vec![SELF_WEIGHT; m.reserved];
    let exps: Vec<f64> = m
        .hosts
        .iter()
        .enumerate()
        .map(|(i, &j)| (c.values.get(i, j) as f64).exp())
        .collect();
    for (&j, e) in m.hosts.iter().zip(&exps) {
        denom[j] += e;
    }
    FusionWeights {
        host: denom.iter().map(|d| SELF_WEIGHT / d).collect(),
        pruned: m.hosts.iter().zip(&exps).map(|(&j, e)| e / denom[j]).collect(),
    }
}

/// Squeezes matched pruned tokens into their hosts. Output has exactly
/// `reserved.rows()` rows.
pub fn fuse(
    reserved: &Matrix,
    pruned: &Matrix,
    c: &SimilarityMatrix,
    m: &MatchResult,
) -> Result<Matrix> {
    check_fuse_shapes(reserved, pruned, c, m)?;
    let w = fusion_weights(c, m);
    Ok(apply_fusion(reserved, pruned, &w, m))
}

fn check_fuse_shapes(
    reserved: &Matrix,
    pruned: &Matrix,
    c: &SimilarityMatrix,
    m: &MatchResult,
) -> Result<()> {
    if c.values.shape() != (pruned.rows(), reserved.rows())
        || m.hosts.len() != pruned.rows()
        || m.reserved != reserved.rows()
    {
        return Err(Error::shape(
            "fuse",
            format!("similarity {}x{}", pruned.rows(), reserved.rows()),
            format!(
                "similarity {:?}, {} hosts over {} columns",
                c.values.shape(),
                m.hosts.len(),
                m.reserved
            ),
        ));
    }
    if pruned.rows() > 0 && pruned.cols() != reserved.cols() {
        return Err(Error::shape("fuse", reserved.cols(), pruned.cols()));
    }
    Ok(())
}

pub(crate) fn apply_fusion(
    reserved: &Matrix,
    pruned: &Matrix,
    w: &FusionWeights,
    m: &MatchResult,
) -> Matrix {
    let d = reserved.cols();
    let mut acc: Vec<Option<Vec<f64>>> = vec![None; reserved.rows()];
    for (i, &j) in m.hosts.iter().enumerate() {
        let slot = acc[j].get_or_insert_with(|| {
            reserved.row(j).iter().map(|&v| w.host[j] * v as f64).collect()
        });
        for (a, &v) in slot.iter_mut().zip(pruned.row(i)) {
            *a += w.pruned[i] * v as f64;
        }
    }
    let mut out = reserved.clone();
    for (j, fused) in acc.into_iter().enumerate() {
        if let Some(fused) = fused {
            for (o, v) in out.row_mut(j)[..d].iter_mut().zip(fused) {
                *o = v as f32;
            }
        }
    }
    out
}

/// Token pruning baseline: keep the class token and reserved tokens.
pub fn baseline_drop(x: &Matrix, p: &TokenPartition) -> Result<Matrix> {
    check_partition(x, p)?;
    gather_rows(x, &p.reserved_tokens())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reorganized {
    pub tokens: Matrix,
    /// Pruned-score mass was zero and a plain mean was used instead.
    pub empty_score_mass: bool,
}

/// Weights for the aggregate-to-one token: normalized pruned scores, or a
/// uniform mean when the mass is zero. Returns `(weights, empty_mass)`.
pub fn reorganize_weights(p: &TokenPartition, scores: &ScoreVector) -> Result<(Vec<f64>, bool)> {
    if scores.len() != p.live_patches() {
        return Err(Error::shape("reorganize scores", p.live_patches(), scores.len()));
    }
    let raw: Vec<f64> = p.pruned.iter().map(|&i| scores.0[i].max(0.0) as f64).collect();
    let mass: f64 = raw.iter().sum();
    if mass > 0.0 {
        Ok((raw.iter().map(|s| s / mass).collect(), false))
    } else {
        let n = raw.len().max(1) as f64;
        Ok((vec![1.0 / n; raw.len()], true))
    }
}

/// Token reorganization baseline: reserved tokens plus one score-weighted
/// mean of all pruned tokens, appended last. With nothing pruned the
/// reserved tokens are returned alone.
pub fn baseline_reorganize(x: &Matrix, p: &TokenPartition, scores: &ScoreVector) -> Result<Reorganized> {
    check_partition(x, p)?;
    let kept = gather_rows(x, &p.reserved_tokens())?;
    if p.pruned.is_empty() {
        return Ok(Reorganized {
            tokens: kept,
            empty_score_mass: false,
        });
    }
    let (weights, empty_score_mass) = reorganize_weights(p, scores)?;
    let extra = weighted_mean(x, &p.pruned_tokens(), &weights);
    Ok(Reorganized {
        tokens: kept.vconcat(&extra)?,
        empty_score_mass,
    })
}

pub(crate) fn weighted_mean(x: &Matrix, rows: &[usize], weights: &[f64]) -> Matrix {
    let mut acc = vec![0.0f64; x.cols()];
    for (&r, &w) in rows.iter().zip(weights) {
        for (a, &v) in acc.iter_mut().zip(x.row(r)) {
            *a += w * v as f64;
        }
    }
    Matrix::row_vector(&acc.iter().map(|&v| v as f32).collect::<Vec<_>>())
}

fn check_partition(x: &Matrix, p: &TokenPartition) -> Result<()> {
    if p.live_patches() + 1 != x.rows() {
        return Err(Error::shape(
            "partition",
            format!("{} tokens", p.live_patches() + 1),
            x.rows(),
        ));
    }
    Ok(())
}

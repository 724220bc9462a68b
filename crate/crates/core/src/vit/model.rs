use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gather_rows, layernorm, linear, Matrix};
use crate::policy::{
    random_policy, reverse_policy, score_dtps, score_etps, topk_partition, DecisionMask,
    PruneSchedule, ScoreVector, TokenPartition, Variant,
};
use crate::stage::{reduce_tokens, StageInput};
use crate::trace::{PolicyTrace, StageTrace};

use super::{mha_forward, mlp_forward, patch_embed, AttentionRecord, ImageBatch, ModelConfig, ModelWeights, LAYERNORM_EPS};

/// What a pruning stage does with the tokens it does not keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// No stages.
    Vanilla,
    /// Discard pruned tokens.
    Prune,
    /// Aggregate pruned tokens into one extra token.
    Reorganize,
    /// Squeeze pruned tokens into their nearest reserved hosts.
    Tps,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Vanilla, Mode::Prune, Mode::Reorganize, Mode::Tps];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Prune => "prune",
            Mode::Reorganize => "reorganize",
            Mode::Tps => "tps",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// Replaces the scored top-k policy, for the motivation and robustness runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PolicyOverride {
    #[default]
    Scored,
    /// Swap reserved and pruned sets at the first stage only.
    ReverseFirst,
    /// Uniformly random reserved sets at every stage.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[batch, num_classes]`.
    pub logits: Matrix,
    pub trace: PolicyTrace,
}

struct ItemStage {
    tokens_in: usize,
    tokens_out: usize,
    partition: TokenPartition,
    histogram: Option<Vec<usize>>,
    zero_norm_tokens: usize,
    empty_score_mass: bool,
}

pub fn model_forward(
    images: &ImageBatch,
    cfg: &ModelConfig,
    weights: &ModelWeights,
    schedule: &PruneSchedule,
    mode: Mode,
) -> Result<ForwardOutput> {
    model_forward_with_policy(images, cfg, weights, schedule, mode, PolicyOverride::Scored)
}

pub fn model_forward_with_policy(
    images: &ImageBatch,
    cfg: &ModelConfig,
    weights: &ModelWeights,
    schedule: &PruneSchedule,
    mode: Mode,
    policy: PolicyOverride,
) -> Result<ForwardOutput> {
    cfg.validate()?;
    schedule.validate(cfg.depth)?;
    if weights.blocks.len() != cfg.depth || weights.score_heads.len() != cfg.depth {
        return Err(Error::shape("model weights depth", cfg.depth, weights.blocks.len()));
    }
    let embedded = patch_embed(images, cfg, weights)?;
    let mut logits = Matrix::zeros(images.batch, cfg.num_classes);
    let mut per_item = Vec::with_capacity(images.batch);
    for b in 0..images.batch {
        let (row, stages) = forward_item(
            embedded.item(b),
            embedded.positional_item(b),
            cfg,
            weights,
            schedule,
            mode,
            policy,
        )?;
        if !row.iter().all(|v| v.is_finite()) {
            return Err(Error::Invariant(format!("non-finite logits for batch item {b}")));
        }
        logits.row_mut(b).copy_from_slice(&row);
        per_item.push(stages);
    }
    let trace = assemble_trace(cfg, schedule, mode, per_item)?;
    Ok(ForwardOutput { logits, trace })
}

fn assemble_trace(
    cfg: &ModelConfig,
    schedule: &PruneSchedule,
    mode: Mode,
    per_item: Vec<Vec<ItemStage>>,
) -> Result<PolicyTrace> {
    let stage_count = if mode == Mode::Vanilla {
        0
    } else {
        schedule.locations.len()
    };
    let mut stages: Vec<StageTrace> = (0..stage_count)
        .map(|s| StageTrace {
            stage: s,
            location: schedule.locations[s],
            tokens_in: 0,
            tokens_out: 0,
            partitions: Vec::new(),
            host_histograms: Vec::new(),
            zero_norm_tokens: 0,
            empty_score_mass: 0,
        })
        .collect();
    for (b, item) in per_item.into_iter().enumerate() {
        if item.len() != stage_count {
            return Err(Error::Invariant(format!(
                "batch item {b} ran {} stages, expected {stage_count}",
                item.len()
            )));
        }
        for (trace, st) in stages.iter_mut().zip(item) {
            if b == 0 {
                trace.tokens_in = st.tokens_in;
                trace.tokens_out = st.tokens_out;
            } else if (trace.tokens_in, trace.tokens_out) != (st.tokens_in, st.tokens_out) {
                return Err(Error::Invariant(format!(
                    "stage {} shape differs across the batch: {}→{} vs {}→{}",
                    trace.stage, trace.tokens_in, trace.tokens_out, st.tokens_in, st.tokens_out
                )));
            }
            trace.partitions.push(st.partition);
            if let Some(h) = st.histogram {
                trace.host_histograms.push(h);
            }
            trace.zero_norm_tokens += st.zero_norm_tokens;
            trace.empty_score_mass += st.empty_score_mass as usize;
        }
    }
    Ok(PolicyTrace {
        initial_tokens: cfg.num_tokens(),
        stages,
    })
}

fn choose_partition(
    scores: &ScoreVector,
    schedule: &PruneSchedule,
    stage: usize,
    policy: PolicyOverride,
) -> TokenPartition {
    match policy {
        PolicyOverride::Scored => topk_partition(scores, schedule.keep_ratio, stage),
        PolicyOverride::ReverseFirst => {
            let p = topk_partition(scores, schedule.keep_ratio, stage);
            if stage == 0 {
                reverse_policy(&p)
            } else {
                p
            }
        }
        PolicyOverride::Random { seed } => {
            random_policy(scores.len(), schedule.keep_ratio, seed, stage)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    tokens: &mut Matrix,
    positional: &mut Option<Matrix>,
    scores: ScoreVector,
    attention: Option<&AttentionRecord>,
    schedule: &PruneSchedule,
    stage: usize,
    mode: Mode,
    policy: PolicyOverride,
) -> Result<ItemStage> {
    let partition = choose_partition(&scores, schedule, stage, policy);
    let out = reduce_tokens(
        mode,
        &StageInput {
            tokens,
            positional: positional.as_ref(),
            partition: &partition,
            scores: &scores,
            attention,
        },
        schedule,
    )?;
    let record = ItemStage {
        tokens_in: tokens.rows(),
        tokens_out: out.tokens.rows(),
        histogram: match mode {
            Mode::Tps => Some(
                out.matched
                    .as_ref()
                    .map(|m| m.host_histogram())
                    .unwrap_or_else(|| vec![0; partition.reserved.len()]),
            ),
            _ => None,
        },
        partition,
        zero_norm_tokens: out.zero_norm_tokens,
        empty_score_mass: out.empty_score_mass,
    };
    *tokens = out.tokens;
    *positional = out.positional;
    Ok(record)
}

fn forward_item(
    mut x: Matrix,
    mut positional: Option<Matrix>,
    cfg: &ModelConfig,
    w: &ModelWeights,
    schedule: &PruneSchedule,
    mode: Mode,
    policy: PolicyOverride,
) -> Result<(Vec<f32>, Vec<ItemStage>)> {
    let mut stages = Vec::new();
    let mut previous_attention: Option<AttentionRecord> = None;
    for block in 1..=cfg.depth {
        let bw = &w.blocks[block - 1];
        let stage = match mode {
            Mode::Vanilla => None,
            _ => schedule.stage_at(block),
        };

        if let (Some(s), Variant::Dtps) = (stage, schedule.variant) {
            let live = DecisionMask::all(x.rows() - 1);
            let scores = score_dtps(&x, &live, &w.score_heads[block - 1])?;
            let attn = previous_attention.as_ref();
            if let Some(a) = attn {
                if a.tokens() != x.rows() {
                    return Err(Error::Invariant(format!(
                        "previous attention covers {} tokens, stage sees {}",
                        a.tokens(),
                        x.rows()
                    )));
                }
            }
            stages.push(run_stage(&mut x, &mut positional, scores, attn, schedule, s, mode, policy)?);
        }

        let (mut mid, record) = mha_forward(&x, bw, cfg.num_heads)?;

        if let (Some(s), Variant::Etps) = (stage, schedule.variant) {
            let scores = score_etps(&record);
            stages.push(run_stage(&mut mid, &mut positional, scores, Some(&record), schedule, s, mode, policy)?);
        }

        x = mlp_forward(&mid, bw)?;
        previous_attention = Some(record);
    }
    let normed = layernorm(&x, &w.norm.gamma, &w.norm.beta, LAYERNORM_EPS)?;
    let class = gather_rows(&normed, &[0])?;
    let logits = linear(&class, &w.head.weight, &w.head.bias)?;
    Ok((logits.into_data(), stages))
}

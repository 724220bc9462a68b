//! Analytical multiply-accumulate counts. One MAC is counted as one FLOP;
//! element-wise costs (LayerNorm, softmax, GELU) are ignored.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::{keep_count, PruneSchedule, Variant};
use crate::vit::ModelConfig;

/// QKV and output projections plus the two attention products.
pub fn attention_macs(n: u64, d: u64) -> u64 {
    4 * n * d * d + 2 * n * n * d
}

pub fn mlp_macs(n: u64, d: u64, mlp_ratio: f64) -> u64 {
    (2.0 * mlp_ratio * (n * d * d) as f64).round() as u64
}

pub fn block_macs(n: u64, d: u64, mlp_ratio: f64) -> u64 {
    attention_macs(n, d) + mlp_macs(n, d, mlp_ratio)
}

/// Similarity between every pruned/reserved pair plus the weighted sums that
/// fold each pruned token into its host.
pub fn squeeze_macs(pruned: u64, reserved: u64, d: u64) -> u64 {
    pruned * reserved * d + 2 * pruned * d
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCost {
    /// 1-based.
    pub block: usize,
    /// Tokens seen by attention.
    pub tokens: usize,
    /// Tokens seen by the MLP. Differs from `tokens` only when a stage sits
    /// between attention and MLP.
    pub mlp_tokens: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub per_block: Vec<BlockCost>,
    pub stem_macs: u64,
    pub head_macs: u64,
    pub tps_overhead_macs: u64,
    pub total_macs: u64,
    pub total_gmacs: f64,
}

impl FlopsReport {
    /// Token counts after the input and after each block's MLP transition,
    /// deduplicated to one entry per stage group.
    pub fn token_counts(&self) -> Vec<usize> {
        let mut counts: Vec<usize> = Vec::new();
        for b in &self.per_block {
            for n in [b.tokens, b.mlp_tokens] {
                if counts.last() != Some(&n) {
                    counts.push(n);
                }
            }
        }
        counts
    }
}

/// Cost of a forward pass with token squeezing at the scheduled blocks.
pub fn model_macs(cfg: &ModelConfig, schedule: &PruneSchedule) -> Result<FlopsReport> {
    cfg.validate()?;
    schedule.validate(cfg.depth)?;
    let d = cfg.embed_dim as u64;
    let mut live = cfg.num_patches();
    let mut overhead = 0u64;
    let mut per_block = Vec::with_capacity(cfg.depth);

    let mut squeeze = |live: &mut usize| {
        let kept = keep_count(*live, schedule.keep_ratio);
        overhead += squeeze_macs((*live - kept) as u64, kept as u64, d);
        *live = kept;
    };

    for block in 1..=cfg.depth {
        let staged = schedule.stage_at(block).is_some();
        if staged && schedule.variant == Variant::Dtps {
            squeeze(&mut live);
        }
        let attn_tokens = live + 1;
        if staged && schedule.variant == Variant::Etps {
            squeeze(&mut live);
        }
        let mlp_tokens = live + 1;
        per_block.push(BlockCost {
            block,
            tokens: attn_tokens,
            mlp_tokens,
            macs: attention_macs(attn_tokens as u64, d) + mlp_macs(mlp_tokens as u64, d, cfg.mlp_ratio),
        });
    }

    let stem_macs = (cfg.num_patches() * cfg.patch_dim()) as u64 * d;
    let head_macs = d * cfg.num_classes as u64;
    let total_macs = stem_macs + head_macs + overhead + per_block.iter().map(|b| b.macs).sum::<u64>();
    Ok(FlopsReport {
        per_block,
        stem_macs,
        head_macs,
        tps_overhead_macs: overhead,
        total_macs,
        total_gmacs: total_macs as f64 / 1e9,
    })
}

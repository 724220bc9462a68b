//! Per-stage record of what a forward pass did to the token sequence.

use serde::{Deserialize, Serialize};

use crate::policy::TokenPartition;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: usize,
    /// 1-based block index the stage is attached to.
    pub location: usize,
    /// Sequence length entering the stage, class token included.
    pub tokens_in: usize,
    pub tokens_out: usize,
    /// One partition per batch item.
    pub partitions: Vec<TokenPartition>,
    /// Pruned tokens absorbed by each reserved patch token, per batch item.
    /// Empty outside squeeze mode.
    pub host_histograms: Vec<Vec<usize>>,
    pub zero_norm_tokens: usize,
    /// Batch items whose pruned score mass was zero.
    pub empty_score_mass: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTrace {
    pub initial_tokens: usize,
    pub stages: Vec<StageTrace>,
}

impl PolicyTrace {
    /// Sequence length of each stage group: the input, then after every stage.
    pub fn token_counts(&self) -> Vec<usize> {
        std::iter::once(self.initial_tokens)
            .chain(self.stages.iter().map(|s| s.tokens_out))
            .collect()
    }
}

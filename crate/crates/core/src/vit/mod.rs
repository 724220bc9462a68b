//! A minimal pre-norm ViT with hook points for token-reduction stages.

mod config;
mod layers;
mod model;
mod tokens;
mod weights;

pub use config::ModelConfig;
pub use layers::{attention_forward, block_forward, mha_forward, mlp_forward, patch_embed, AttentionRecord};
pub use model::{model_forward, model_forward_with_policy, ForwardOutput, Mode, PolicyOverride};
pub use tokens::{ImageBatch, TokenTensor};
pub use weights::{BlockWeights, LayerNormWeights, LinearWeights, ModelWeights, ScoreHeadWeights};

/// LayerNorm epsilon used throughout (DeiT default).
pub const LAYERNORM_EPS: f32 = 1e-6;

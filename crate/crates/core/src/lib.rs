//! Token pruning with squeezing for plain vision transformers.
//!
//! Pruned tokens are not discarded: each one is matched to its most similar
//! reserved token and folded into it with exp-similarity weights, so the
//! reduced sequence still carries their information. The crate contains a
//! reference ViT forward pass, the scoring and selection policies, the
//! squeeze operators with the drop and reorganize baselines, a masked/padded
//! spatial-reduction attention pair and an analytical cost model.

pub mod error;
pub mod fixture;
pub mod flops;
pub mod numerics;
pub mod policy;
pub mod squeeze;
pub mod sra;
pub mod stage;
pub mod trace;
pub mod vit;

pub use error::{Error, Result};
pub use flops::{model_macs, FlopsReport};
pub use numerics::Matrix;
pub use policy::{PruneSchedule, TokenPartition, Variant};
pub use trace::{PolicyTrace, StageTrace};
pub use vit::{model_forward, model_forward_with_policy, ForwardOutput, ImageBatch, Mode, ModelConfig, ModelWeights, PolicyOverride};

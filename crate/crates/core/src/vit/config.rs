use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backbone geometry. A class token is always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn deit_tiny() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            embed_dim: 192,
            depth: 12,
            num_heads: 3,
            mlp_ratio: 4.0,
            num_classes: 1000,
        }
    }

    pub fn deit_small() -> Self {
        Self {
            embed_dim: 384,
            num_heads: 6,
            ..Self::deit_tiny()
        }
    }

    /// Looks up a named preset (`deit-tiny`, `deit-small`).
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "deit-tiny" | "deit-t" | "deit_tiny" => Ok(Self::deit_tiny()),
            "deit-small" | "deit-s" | "deit_small" => Ok(Self::deit_small()),
            other => Err(Error::Config(format!(
                "unknown model preset {other:?} (expected deit-tiny or deit-small)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 {
            return fail("image and patch size must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            ));
        }
        if self.embed_dim < 2 {
            return fail("embed dim must be at least 2".into());
        }
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be at least 1".into());
        }
        if self.mlp_ratio.is_nan() || self.mlp_ratio <= 0.0 || self.hidden_dim() == 0 {
            return fail(format!("invalid mlp ratio {}", self.mlp_ratio));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patch tokens plus the class token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn hidden_dim(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    /// Flattened patch width: `3 · patch²`.
    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    /// Width of the score head's projection.
    pub fn score_dim(&self) -> usize {
        self.embed_dim / 2
    }
}

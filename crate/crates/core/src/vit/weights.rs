use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::ModelConfig;

/// `y = x W + b`, `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearWeights {
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

impl LinearWeights {
    pub fn new(weight: Matrix, bias: Vec<f32>) -> Self {
        Self { weight, bias }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: vec![0.0; output],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: Matrix::identity(n),
            bias: vec![0.0; n],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormWeights {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl LayerNormWeights {
    pub fn ones(d: usize) -> Self {
        Self {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            gamma: vec![0.0; d],
            beta: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub norm1: LayerNormWeights,
    /// `d → 3d`, output columns ordered `[q | k | v]`, heads contiguous inside each.
    pub qkv: LinearWeights,
    pub proj: LinearWeights,
    pub norm2: LayerNormWeights,
    pub fc1: LinearWeights,
    pub fc2: LinearWeights,
}

impl BlockWeights {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            norm1: LayerNormWeights::ones(d),
            qkv: LinearWeights::zeros(d, 3 * d),
            proj: LinearWeights::zeros(d, d),
            norm2: LayerNormWeights::ones(d),
            fc1: LinearWeights::zeros(d, hidden),
            fc2: LinearWeights::zeros(hidden, d),
        }
    }
}

/// Two-branch keep/drop predictor: LayerNorm, a `d → d/2` projection with
/// GELU whose masked mean forms the global half, then `d → d/2 → 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHeadWeights {
    pub norm: LayerNormWeights,
    pub local: LinearWeights,
    pub hidden: LinearWeights,
    pub out: LinearWeights,
}

impl ScoreHeadWeights {
    pub fn zeros(d: usize) -> Self {
        let half = d / 2;
        Self {
            norm: LayerNormWeights::zeros(d),
            local: LinearWeights::zeros(d, half),
            hidden: LinearWeights::zeros(2 * half, half),
            out: LinearWeights::zeros(half, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    /// `3·patch² → d`, equivalent to the strided patch convolution.
    pub patch_proj: LinearWeights,
    pub class_token: Vec<f32>,
    /// `[tokens, d]`, class position first.
    pub pos_embed: Matrix,
    pub blocks: Vec<BlockWeights>,
    /// One learned scorer per block, used when a dTPS stage sits there.
    pub score_heads: Vec<ScoreHeadWeights>,
    pub norm: LayerNormWeights,
    pub head: LinearWeights,
}

/// Flat view of one parameter tensor, used by fixture I/O and init.
pub struct TensorSlot<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f32],
}

impl ModelWeights {
    /// All-zero weights with unit LayerNorm scales.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        Self {
            patch_proj: LinearWeights::zeros(cfg.patch_dim(), d),
            class_token: vec![0.0; d],
            pos_embed: Matrix::zeros(cfg.num_tokens(), d),
            blocks: (0..cfg.depth)
                .map(|_| BlockWeights::zeros(d, cfg.hidden_dim()))
                .collect(),
            score_heads: (0..cfg.depth).map(|_| ScoreHeadWeights::zeros(d)).collect(),
            norm: LayerNormWeights::ones(d),
            head: LinearWeights::zeros(d, cfg.num_classes),
        }
    }

    /// Seeded fixture: linear weights `N(0, 1/fan_in)`, biases `N(0, 0.02²)`,
    /// embeddings `N(0, 0.1²)`, LayerNorm at identity.
    pub fn random(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut weights = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in weights.slots_mut() {
            let leaf = slot.name.rsplit('.').next().unwrap_or_default();
            let std = match leaf {
                "gamma" | "beta" => continue,
                "weight" => 1.0 / (slot.shape[0] as f64).sqrt(),
                "bias" => 0.02,
                _ => 0.1,
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in slot.data.iter_mut() {
                *v = normal.sample(&mut rng) as f32;
            }
        }
        Ok(weights)
    }

    /// Every tensor in a fixed order with a stable dotted name.
    pub fn slots_mut(&mut self) -> Vec<TensorSlot<'_>> {
        let mut out = Vec::new();
        fn lin<'a>(out: &mut Vec<TensorSlot<'a>>, name: &str, l: &'a mut LinearWeights) {
            let shape = vec![l.weight.rows(), l.weight.cols()];
            let n = l.bias.len();
            out.push(TensorSlot {
                name: format!("{name}.weight"),
                shape,
                data: l.weight.data_mut(),
            });
            out.push(TensorSlot {
                name: format!("{name}.bias"),
                shape: vec![n],
                data: &mut l.bias,
            });
        }
        fn ln<'a>(out: &mut Vec<TensorSlot<'a>>, name: &str, l: &'a mut LayerNormWeights) {
            let n = l.gamma.len();
            out.push(TensorSlot {
                name: format!("{name}.gamma"),
                shape: vec![n],
                data: &mut l.gamma,
            });
            out.push(TensorSlot {
                name: format!("{name}.beta"),
                shape: vec![n],
                data: &mut l.beta,
            });
        }

        lin(&mut out, "patch_proj", &mut self.patch_proj);
        let d = self.class_token.len();
        out.push(TensorSlot {
            name: "class_token".into(),
            shape: vec![d],
            data: &mut self.class_token,
        });
        let shape = vec![self.pos_embed.rows(), self.pos_embed.cols()];
        out.push(TensorSlot {
            name: "pos_embed".into(),
            shape,
            data: self.pos_embed.data_mut(),
        });
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("blocks.{i}");
            ln(&mut out, &format!("{p}.norm1"), &mut b.norm1);
            lin(&mut out, &format!("{p}.qkv"), &mut b.qkv);
            lin(&mut out, &format!("{p}.proj"), &mut b.proj);
            ln(&mut out, &format!("{p}.norm2"), &mut b.norm2);
            lin(&mut out, &format!("{p}.fc1"), &mut b.fc1);
            lin(&mut out, &format!("{p}.fc2"), &mut b.fc2);
        }
        for (i, h) in self.score_heads.iter_mut().enumerate() {
            let p = format!("score_heads.{i}");
            ln(&mut out, &format!("{p}.norm"), &mut h.norm);
            lin(&mut out, &format!("{p}.local"), &mut h.local);
            lin(&mut out, &format!("{p}.hidden"), &mut h.hidden);
            lin(&mut out, &format!("{p}.out"), &mut h.out);
        }
        ln(&mut out, "norm", &mut self.norm);
        lin(&mut out, "head", &mut self.head);
        out
    }

    /// `(name, shape, values)` for every tensor, in slot order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        // slots_mut needs &mut; a clone keeps the public view immutable.
        let mut copy = self.clone();
        copy.slots_mut()
            .into_iter()
            .map(|s| (s.name, s.shape, s.data.to_vec()))
            .collect()
    }

    /// Checks every tensor against the shapes `cfg` implies.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(cfg).tensors();
        let actual = self.tensors();
        if expected.len() != actual.len() {
            return Err(Error::load(
                "tensors",
                format!("expected {} tensors, found {}", expected.len(), actual.len()),
            ));
        }
        for ((en, es, _), (an, ashape, _)) in expected.iter().zip(&actual) {
            if en != an || es != ashape {
                return Err(Error::load(
                    an.clone(),
                    format!("expected {en} with shape {es:?}, found shape {ashape:?}"),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 over every tensor's little-endian bytes in slot order.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, _, data) in self.tensors() {
            h.update(name.as_bytes());
            for v in data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

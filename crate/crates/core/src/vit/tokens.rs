use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Images as `[batch, size, size, 3]`, row-major, channels last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBatch {
    pub batch: usize,
    pub size: usize,
    pub data: Vec<f32>,
}

impl ImageBatch {
    pub fn new(batch: usize, size: usize, data: Vec<f32>) -> Result<Self> {
        let expected = batch * size * size * 3;
        if data.len() != expected {
            return Err(Error::shape("ImageBatch", expected, data.len()));
        }
        Ok(Self { batch, size, data })
    }

    pub fn zeros(batch: usize, size: usize) -> Self {
        Self {
            batch,
            size,
            data: vec![0.0; batch * size * size * 3],
        }
    }

    /// Standard-normal pixels from a seeded generator.
    pub fn random(batch: usize, size: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..batch * size * size * 3)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { batch, size, data }
    }

    pub fn item(&self, b: usize) -> &[f32] {
        let n = self.size * self.size * 3;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn pixel(&self, b: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[((b * self.size + y) * self.size + x) * 3 + c]
    }
}

/// `[batch, tokens, dim]` features. Row 0 of each item is the class token.
///
/// `positional`, when present, has the same layout as `values` and holds the
/// positional embedding each token carries (gathered and fused alongside it).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTensor {
    pub batch: usize,
    pub tokens: usize,
    pub dim: usize,
    pub values: Vec<f32>,
    pub positional: Option<Vec<f32>>,
}

impl TokenTensor {
    pub fn from_items(items: Vec<Matrix>, positional: Option<Vec<Matrix>>) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Input("token tensor with no batch items".into()))?;
        let (tokens, dim) = first.shape();
        if tokens == 0 {
            return Err(Error::Input("token tensor with no tokens".into()));
        }
        for m in items.iter().chain(positional.iter().flatten()) {
            if m.shape() != (tokens, dim) {
                return Err(Error::shape(
                    "TokenTensor",
                    format!("{tokens}x{dim} per item"),
                    format!("{:?}", m.shape()),
                ));
            }
        }
        if let Some(p) = &positional {
            if p.len() != items.len() {
                return Err(Error::shape("TokenTensor positional", items.len(), p.len()));
            }
        }
        let batch = items.len();
        let values = items.into_iter().flat_map(Matrix::into_data).collect();
        let positional = positional.map(|p| p.into_iter().flat_map(Matrix::into_data).collect());
        Ok(Self {
            batch,
            tokens,
            dim,
            values,
            positional,
        })
    }

    fn slice(&self, data: &[f32], b: usize) -> Matrix {
        let n = self.tokens * self.dim;
        Matrix::new(self.tokens, self.dim, data[b * n..(b + 1) * n].to_vec())
            .expect("token tensor layout")
    }

    pub fn item(&self, b: usize) -> Matrix {
        self.slice(&self.values, b)
    }

    pub fn positional_item(&self, b: usize) -> Option<Matrix> {
        self.positional.as_ref().map(|p| self.slice(p, b))
    }

    pub fn items(&self) -> Vec<Matrix> {
        (0..self.batch).map(|b| self.item(b)).collect()
    }
}

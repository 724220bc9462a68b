use crate::error::{Error, Result};
use crate::numerics::{gelu, layernorm, linear, matmul, matmul_transposed, softmax_rows, Matrix};

use super::{BlockWeights, ImageBatch, ModelConfig, ModelWeights, TokenTensor, LAYERNORM_EPS};

/// Per-head attention probabilities and projections from one block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    /// `[heads][N, N]`, rows sum to 1.
    pub attention: Vec<Matrix>,
    /// `[heads][N, head_dim]`.
    pub q: Vec<Matrix>,
    pub k: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AttentionRecord {
    /// A record holding only attention maps.
    pub fn from_attention(attention: Vec<Matrix>) -> Self {
        Self {
            attention,
            q: Vec::new(),
            k: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn heads(&self) -> usize {
        self.attention.len()
    }

    pub fn tokens(&self) -> usize {
        self.attention.first().map_or(0, Matrix::rows)
    }

    /// Head-averaged attention from token `i` to token `j`.
    pub fn head_mean(&self, i: usize, j: usize) -> f32 {
        let total: f64 = self.attention.iter().map(|a| a.get(i, j) as f64).sum();
        (total / self.heads() as f64) as f32
    }
}

/// Splits images into patches, projects them, prepends the class token and
/// adds positional embeddings. A copy of the positional embedding travels
/// with the tokens.
pub fn patch_embed(images: &ImageBatch, cfg: &ModelConfig, w: &ModelWeights) -> Result<TokenTensor> {
    if images.size != cfg.image_size {
        return Err(Error::shape("patch_embed", cfg.image_size, images.size));
    }
    let (p, g, d) = (cfg.patch_size, cfg.grid(), cfg.embed_dim);
    let mut items = Vec::with_capacity(images.batch);
    let mut positional = Vec::with_capacity(images.batch);
    for b in 0..images.batch {
        let mut patches = Matrix::zeros(g * g, cfg.patch_dim());
        for py in 0..g {
            for px in 0..g {
                let row = patches.row_mut(py * g + px);
                let mut k = 0;
                for dy in 0..p {
                    for dx in 0..p {
                        for c in 0..3 {
                            row[k] = images.pixel(b, py * p + dy, px * p + dx, c);
                            k += 1;
                        }
                    }
                }
            }
        }
        let embedded = linear(&patches, &w.patch_proj.weight, &w.patch_proj.bias)?;
        let mut tokens = Matrix::row_vector(&w.class_token).vconcat(&embedded)?;
        if tokens.cols() != d || w.pos_embed.shape() != tokens.shape() {
            return Err(Error::shape(
                "patch_embed pos_embed",
                format!("{:?}", tokens.shape()),
                format!("{:?}", w.pos_embed.shape()),
            ));
        }
        tokens = tokens.add(&w.pos_embed)?;
        items.push(tokens);
        positional.push(w.pos_embed.clone());
    }
    TokenTensor::from_items(items, Some(positional))
}

/// Multi-head self-attention on already-normalized tokens, including the
/// output projection but not the residual.
pub fn attention_forward(
    normed: &Matrix,
    w: &BlockWeights,
    num_heads: usize,
) -> Result<(Matrix, AttentionRecord)> {
    let d = normed.cols();
    if w.qkv.input_dim() != d || w.qkv.output_dim() != 3 * d {
        return Err(Error::shape(
            "attention qkv",
            format!("{d} -> {}", 3 * d),
            format!("{} -> {}", w.qkv.input_dim(), w.qkv.output_dim()),
        ));
    }
    if num_heads == 0 || !d.is_multiple_of(num_heads) {
        return Err(Error::Config(format!("{d} channels over {num_heads} heads")));
    }
    let hd = d / num_heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let qkv = linear(normed, &w.qkv.weight, &w.qkv.bias)?;

    let mut record = AttentionRecord::from_attention(Vec::with_capacity(num_heads));
    let mut heads_out = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let q = qkv.column_slice(h * hd, hd)?;
        let k = qkv.column_slice(d + h * hd, hd)?;
        let v = qkv.column_slice(2 * d + h * hd, hd)?;
        let attn = softmax_rows(&matmul_transposed(&q, &k)?, scale);
        heads_out.push(matmul(&attn, &v)?);
        record.attention.push(attn);
        record.q.push(q);
        record.k.push(k);
        record.v.push(v);
    }
    let mut merged = heads_out[0].clone();
    for h in &heads_out[1..] {
        merged = merged.hconcat(h)?;
    }
    let out = linear(&merged, &w.proj.weight, &w.proj.bias)?;
    Ok((out, record))
}

/// `x + Attn(LN₁ x)`.
pub fn mha_forward(x: &Matrix, w: &BlockWeights, num_heads: usize) -> Result<(Matrix, AttentionRecord)> {
    let normed = layernorm(x, &w.norm1.gamma, &w.norm1.beta, LAYERNORM_EPS)?;
    let (attn, record) = attention_forward(&normed, w, num_heads)?;
    Ok((x.add(&attn)?, record))
}

/// `x + FC₂ GELU(FC₁ LN₂ x)`.
pub fn mlp_forward(x: &Matrix, w: &BlockWeights) -> Result<Matrix> {
    let normed = layernorm(x, &w.norm2.gamma, &w.norm2.beta, LAYERNORM_EPS)?;
    let hidden = gelu(&linear(&normed, &w.fc1.weight, &w.fc1.bias)?);
    let out = linear(&hidden, &w.fc2.weight, &w.fc2.bias)?;
    x.add(&out)
}

pub fn block_forward(x: &Matrix, w: &BlockWeights, num_heads: usize) -> Result<Matrix> {
    let (x, _) = mha_forward(x, w, num_heads)?;
    mlp_forward(&x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            image_size: 32,
            patch_size: 16,
            embed_dim: 8,
            depth: 2,
            num_heads: 2,
            mlp_ratio: 2.0,
            num_classes: 4,
        }
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    // ---- naive oracles on Vec<Vec<f64>>, independent of numerics ----

    fn ln_naive(x: &[Vec<f64>], gamma: &[f32], beta: &[f32]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|r| {
                let n = r.len() as f64;
                let mean = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                r.iter()
                    .enumerate()
                    .map(|(j, v)| (v - mean) / (var + LAYERNORM_EPS as f64).sqrt() * gamma[j] as f64 + beta[j] as f64)
                    .collect()
            })
            .collect()
    }

    fn lin_naive(x: &[Vec<f64>], w: &super::super::LinearWeights) -> Vec<Vec<f64>> {
        x.iter()
            .map(|r| {
                (0..w.output_dim())
                    .map(|o| {
                        w.bias[o] as f64
                            + (0..w.input_dim()).map(|i| r[i] * w.weight.get(i, o) as f64).sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    fn attn_naive(x: &[Vec<f64>], w: &BlockWeights, heads: usize) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let n = x.len();
        let d = x[0].len();
        let hd = d / heads;
        let normed = ln_naive(x, &w.norm1.gamma, &w.norm1.beta);
        let qkv = lin_naive(&normed, &w.qkv);
        let mut merged = vec![vec![0.0; d]; n];
        let mut maps = Vec::new();
        for h in 0..heads {
            let mut map = vec![vec![0.0; n]; n];
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..hd).map(|c| qkv[i][h * hd + c] * qkv[j][d + h * hd + c]).sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for j in 0..n {
                    map[i][j] = (logits[j] - m).exp() / z;
                }
                for c in 0..hd {
                    merged[i][h * hd + c] = (0..n).map(|j| map[i][j] * qkv[j][2 * d + h * hd + c]).sum();
                }
            }
            maps.push(map);
        }
        let proj = lin_naive(&merged, &w.proj);
        let out = x.iter().zip(&proj).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect()).collect();
        (out, maps)
    }

    fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
        m.iter_rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
    }

    fn assert_rows_close(a: &Matrix, b: &[Vec<f64>], tol: f64) {
        for (ra, rb) in a.iter_rows().zip(b) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((*x as f64 - y).abs() <= tol, "{x} vs {y}");
            }
        }
    }

    fn random_block(seed: u64) -> BlockWeights {
        let w = ModelWeights::random(&cfg(), seed).unwrap();
        let mut b = w.blocks[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for v in b.norm1.gamma.iter_mut().chain(b.norm2.beta.iter_mut()) {
            *v += rng.random_range(-0.3..0.3);
        }
        b
    }

    #[test]
    fn patch_embed_token_counts() {
        let w = ModelWeights::zeros(&cfg());
        let t = patch_embed(&ImageBatch::zeros(2, 32), &cfg(), &w).unwrap();
        assert_eq!((t.batch, t.tokens, t.dim), (2, 5, 8));

        let big = ModelConfig::deit_small();
        assert_eq!(big.num_tokens(), 197);
    }

    #[test]
    fn patch_embed_zero_image_gives_positional() {
        let mut w = ModelWeights::random(&cfg(), 3).unwrap();
        w.patch_proj = super::super::LinearWeights::zeros(cfg().patch_dim(), 8);
        w.class_token = vec![0.0; 8];
        let t = patch_embed(&ImageBatch::zeros(1, 32), &cfg(), &w).unwrap();
        assert_eq!(t.item(0), w.pos_embed);
        assert_eq!(t.positional_item(0).unwrap(), w.pos_embed);
    }

    #[test]
    fn patch_embed_size_mismatch() {
        let w = ModelWeights::zeros(&cfg());
        assert!(patch_embed(&ImageBatch::zeros(1, 48), &cfg(), &w).is_err());
    }

    #[test]
    fn patch_embed_flattening_matches_manual_patch() {
        let c = cfg();
        let w = ModelWeights::random(&c, 4).unwrap();
        let img = ImageBatch::random(1, 32, 9);
        let t = patch_embed(&img, &c, &w).unwrap();
        // patch (py=1, px=0) is token 3.
        let mut flat = Vec::new();
        for dy in 0..16 {
            for dx in 0..16 {
                for ch in 0..3 {
                    flat.push(img.pixel(0, 16 + dy, dx, ch) as f64);
                }
            }
        }
        let expect = lin_naive(&[flat], &w.patch_proj);
        for j in 0..8 {
            let e = expect[0][j] + w.pos_embed.get(3, j) as f64;
            assert!((t.item(0).get(3, j) as f64 - e).abs() < 1e-4);
        }
    }

    #[test]
    fn single_token_attention_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(&mut rng, 1, 8);
        let (out, rec) = mha_forward(&x, &random_block(1), 2).unwrap();
        assert_eq!(out.shape(), (1, 8));
        for a in &rec.attention {
            assert_eq!(a.data(), &[1.0]);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 9, 8);
        let (_, rec) = mha_forward(&x, &random_block(2), 2).unwrap();
        for a in &rec.attention {
            for r in a.iter_rows() {
                let s: f64 = r.iter().map(|&v| v as f64).sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn mha_matches_per_head_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 4, 8);
        let w = random_block(3);
        let (out, rec) = mha_forward(&x, &w, 2).unwrap();
        let (expect, maps) = attn_naive(&to_rows(&x), &w, 2);
        assert_rows_close(&out, &expect, 1e-5);
        for (a, m) in rec.attention.iter().zip(&maps) {
            assert_rows_close(a, m, 1e-5);
        }
    }

    #[test]
    fn block_with_zero_value_and_mlp_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 6, 8);
        let mut w = random_block(5);
        // Zero the value projection and the output projections.
        for i in 0..8 {
            for j in 16..24 {
                w.qkv.weight.set(i, j, 0.0);
            }
        }
        w.qkv.bias[16..24].iter_mut().for_each(|b| *b = 0.0);
        w.proj = super::super::LinearWeights::zeros(8, 8);
        w.fc2 = super::super::LinearWeights::zeros(16, 8);
        assert_eq!(block_forward(&x, &w, 2).unwrap(), x);
    }

    #[test]
    fn block_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random_block(6);
        for n in [1, 2, 7, 30] {
            let x = random(&mut rng, n, 8);
            assert_eq!(block_forward(&x, &w, 2).unwrap().shape(), (n, 8));
        }
    }

    #[test]
    fn block_matches_step_by_step_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, 5, 8);
        let w = random_block(8);
        let (mid, _) = attn_naive(&to_rows(&x), &w, 2);
        let normed = ln_naive(&mid, &w.norm2.gamma, &w.norm2.beta);
        let hidden: Vec<Vec<f64>> = lin_naive(&normed, &w.fc1)
            .into_iter()
            .map(|r| r.into_iter().map(|v| 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2))).collect())
            .collect();
        let mlp = lin_naive(&hidden, &w.fc2);
        let expect: Vec<Vec<f64>> = mid.iter().zip(&mlp).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + v).collect()).collect();
        assert_rows_close(&block_forward(&x, &w, 2).unwrap(), &expect, 1e-5);
    }

    #[test]
    fn mha_dim_mismatch() {
        let x = Matrix::zeros(3, 6);
        assert!(mha_forward(&x, &random_block(1), 2).is_err());
    }
}

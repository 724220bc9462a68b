//! Spatial-reduction attention over a pruned token grid.
//!
//! Two paths compute the same thing. The masked path keeps the full grid and
//! zeroes dropped keys/values; the padded path works on the kept rows only and
//! re-inserts zeros before the spatial reduction.

use crate::error::{Error, Result};
use crate::numerics::{gather_rows, linear, matmul, matmul_transposed, scatter_rows, softmax_rows, Matrix};
use crate::policy::{DecisionMask, TokenPartition};
use crate::vit::LinearWeights;

/// Row-major token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpatialGrid {
    pub height: usize,
    pub width: usize,
}

impl SpatialGrid {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn check(&self, ratio: usize) -> Result<()> {
        if ratio == 0 || !self.height.is_multiple_of(ratio) || !self.width.is_multiple_of(ratio) {
            return Err(Error::shape(
                "spatial grid",
                format!("dims divisible by {ratio}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }
}

/// r×r average pool followed by a linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialReduction {
    pub ratio: usize,
    pub proj: LinearWeights,
}

impl SpatialReduction {
    pub fn identity(ratio: usize, dim: usize) -> Self {
        Self {
            ratio,
            proj: LinearWeights::identity(dim),
        }
    }
}

pub fn spatial_reduce(x: &Matrix, grid: SpatialGrid, sr: &SpatialReduction) -> Result<Matrix> {
    grid.check(sr.ratio)?;
    if x.rows() != grid.tokens() {
        return Err(Error::shape("spatial_reduce", grid.tokens(), x.rows()));
    }
    let r = sr.ratio;
    let (oh, ow, d) = (grid.height / r, grid.width / r, x.cols());
    let area = (r * r) as f64;
    let mut pooled = Matrix::zeros(oh * ow, d);
    let mut acc = vec![0f64; d];
    for by in 0..oh {
        for bx in 0..ow {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for dy in 0..r {
                for dx in 0..r {
                    let row = x.row((by * r + dy) * grid.width + bx * r + dx);
                    acc.iter_mut().zip(row).for_each(|(a, &v)| *a += v as f64);
                }
            }
            // Zeroed (dropped) cells still count toward the r² divisor.
            for (o, a) in pooled.row_mut(by * ow + bx).iter_mut().zip(&acc) {
                *o = (a / area) as f32;
            }
        }
    }
    linear(&pooled, &sr.proj.weight, &sr.proj.bias)
}

/// Multi-head attention of `q` against reduced keys and values. No output
/// projection; heads are concatenated.
pub fn sra_attention(q: &Matrix, k: &Matrix, v: &Matrix, num_heads: usize) -> Result<Matrix> {
    let d = q.cols();
    if num_heads == 0 || !d.is_multiple_of(num_heads) {
        return Err(Error::shape("sra heads", format!("divisor of {d}"), num_heads));
    }
    if k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(Error::shape(
            "sra key/value",
            format!("[m, {d}] pair"),
            format!("{:?} / {:?}", k.shape(), v.shape()),
        ));
    }
    let hd = d / num_heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut out: Option<Matrix> = None;
    for h in 0..num_heads {
        let qh = q.column_slice(h * hd, hd)?;
        let kh = k.column_slice(h * hd, hd)?;
        let vh = v.column_slice(h * hd, hd)?;
        let a = softmax_rows(&matmul_transposed(&qh, &kh)?, scale);
        let oh = matmul(&a, &vh)?;
        out = Some(match out {
            None => oh,
            Some(o) => o.hconcat(&oh)?,
        });
    }
    Ok(out.expect("at least one head"))
}

pub fn sra_plain(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    grid: SpatialGrid,
    sr: &SpatialReduction,
    num_heads: usize,
) -> Result<Matrix> {
    let kr = spatial_reduce(k, grid, sr)?;
    let vr = spatial_reduce(v, grid, sr)?;
    sra_attention(q, &kr, &vr, num_heads)
}

fn zero_dropped(x: &Matrix, mask: &DecisionMask) -> Matrix {
    let mut out = x.clone();
    for (i, &keep) in mask.0.iter().enumerate() {
        if !keep {
            out.row_mut(i).fill(0.0);
        }
    }
    out
}

/// Full-grid path. Returns one row per grid position; only rows kept by
/// `mask` are meaningful downstream.
pub fn sra_masked(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    mask: &DecisionMask,
    grid: SpatialGrid,
    sr: &SpatialReduction,
    num_heads: usize,
) -> Result<Matrix> {
    for (name, m) in [("q", q), ("k", k), ("v", v)] {
        if m.rows() != grid.tokens() {
            return Err(Error::shape("sra_masked", format!("{} {name} rows", grid.tokens()), m.rows()));
        }
    }
    if mask.len() != grid.tokens() {
        return Err(Error::shape("sra_masked mask", grid.tokens(), mask.len()));
    }
    sra_plain(q, &zero_dropped(k, mask), &zero_dropped(v, mask), grid, sr, num_heads)
}

/// Pruned path: inputs hold only the reserved rows, in partition order.
/// Output has `|reserved|` rows.
pub fn sra_padded(
    q_kept: &Matrix,
    k_kept: &Matrix,
    v_kept: &Matrix,
    partition: &TokenPartition,
    grid: SpatialGrid,
    sr: &SpatialReduction,
    num_heads: usize,
) -> Result<Matrix> {
    let n = grid.tokens();
    if let Some(&bad) = partition.reserved.iter().chain(&partition.pruned).find(|&&i| i >= n) {
        return Err(Error::Input(format!("token index {bad} outside {}x{} grid", grid.height, grid.width)));
    }
    if partition.live_patches() != n {
        return Err(Error::shape("sra_padded partition", n, partition.live_patches()));
    }
    let kept = partition.reserved.len();
    for (name, m) in [("q", q_kept), ("k", k_kept), ("v", v_kept)] {
        if m.rows() != kept {
            return Err(Error::shape("sra_padded", format!("{kept} {name} rows"), m.rows()));
        }
    }
    let k = scatter_rows(k_kept, &partition.reserved, n)?;
    let v = scatter_rows(v_kept, &partition.reserved, n)?;
    sra_plain(q_kept, &k, &v, grid, sr, num_heads)
}

/// Gathers the kept rows of a full-grid result for comparison with the
/// padded path.
pub fn kept_rows(full: &Matrix, partition: &TokenPartition) -> Result<Matrix> {
    gather_rows(full, &partition.reserved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::random_policy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn ratio_one_identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 6, 3);
        let y = spatial_reduce(&x, SpatialGrid::new(2, 3), &SpatialReduction::identity(1, 3)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn constant_grid_stays_constant() {
        let x = Matrix::filled(16, 2, 2.5);
        let y = spatial_reduce(&x, SpatialGrid::new(4, 4), &SpatialReduction::identity(2, 2)).unwrap();
        assert_eq!(y, Matrix::filled(4, 2, 2.5));
    }

    #[test]
    fn block_means_by_hand() {
        let x = Matrix::new(16, 1, (0..16).map(|v| v as f32).collect()).unwrap();
        let y = spatial_reduce(&x, SpatialGrid::new(4, 4), &SpatialReduction::identity(2, 1)).unwrap();
        // Blocks {0,1,4,5}, {2,3,6,7}, {8,9,12,13}, {10,11,14,15}.
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn indivisible_grid_is_shape_error() {
        let x = Matrix::zeros(6, 1);
        let r = spatial_reduce(&x, SpatialGrid::new(2, 3), &SpatialReduction::identity(2, 1));
        assert!(matches!(r, Err(Error::Shape { .. })));
    }

    #[test]
    fn all_ones_mask_equals_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = SpatialGrid::new(4, 4);
        let (q, k, v) = (
            random_matrix(&mut rng, 16, 4),
            random_matrix(&mut rng, 16, 4),
            random_matrix(&mut rng, 16, 4),
        );
        let sr = SpatialReduction::identity(2, 4);
        let plain = sra_plain(&q, &k, &v, grid, &sr, 2).unwrap();
        let masked = sra_masked(&q, &k, &v, &DecisionMask::all(16), grid, &sr, 2).unwrap();
        assert_eq!(plain, masked);
    }

    #[test]
    fn empty_mask_gives_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = SpatialGrid::new(2, 2);
        let q = random_matrix(&mut rng, 4, 2);
        let k = random_matrix(&mut rng, 4, 2);
        let v = random_matrix(&mut rng, 4, 2);
        let sr = SpatialReduction::identity(1, 2);
        let out = sra_masked(&q, &k, &v, &DecisionMask(vec![false; 4]), grid, &sr, 1).unwrap();
        assert_eq!(out, Matrix::zeros(4, 2));
    }

    #[test]
    fn pad_of_gather_equals_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 9, 3);
        let p = random_policy(9, 0.5, 11, 0);
        let padded = scatter_rows(&gather_rows(&x, &p.reserved).unwrap(), &p.reserved, 9).unwrap();
        assert_eq!(padded, zero_dropped(&x, &DecisionMask::from_partition(&p)));
    }

    #[test]
    fn full_keep_padded_equals_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = SpatialGrid::new(4, 2);
        let (q, k, v) = (
            random_matrix(&mut rng, 8, 4),
            random_matrix(&mut rng, 8, 4),
            random_matrix(&mut rng, 8, 4),
        );
        let sr = SpatialReduction::identity(2, 4);
        let p = TokenPartition::keep_all(8, 0);
        assert_eq!(
            sra_padded(&q, &k, &v, &p, grid, &sr, 2).unwrap(),
            sra_plain(&q, &k, &v, grid, &sr, 2).unwrap()
        );
    }

    #[test]
    fn masked_and_padded_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let grid = SpatialGrid::new(4, 4);
        let d = 6;
        let (q, k, v) = (
            random_matrix(&mut rng, 16, d),
            random_matrix(&mut rng, 16, d),
            random_matrix(&mut rng, 16, d),
        );
        let sr = SpatialReduction {
            ratio: 2,
            proj: LinearWeights::new(random_matrix(&mut rng, d, d), vec![0.1; d]),
        };
        let p = random_policy(16, 0.6, 9, 0);
        let mask = DecisionMask::from_partition(&p);
        let full = sra_masked(&q, &k, &v, &mask, grid, &sr, 3).unwrap();
        let g = |m: &Matrix| gather_rows(m, &p.reserved).unwrap();
        let padded = sra_padded(&g(&q), &g(&k), &g(&v), &p, grid, &sr, 3).unwrap();
        assert_eq!(padded.rows(), p.reserved.len());
        assert!(kept_rows(&full, &p).unwrap().max_abs_diff(&padded) <= 1e-5);
    }

    #[test]
    fn out_of_grid_index_is_input_error() {
        let p = TokenPartition {
            stage: 0,
            reserved: vec![0, 9],
            pruned: vec![1, 2],
        };
        let m = Matrix::zeros(2, 2);
        let r = sra_padded(&m, &m, &m, &p, SpatialGrid::new(2, 2), &SpatialReduction::identity(1, 2), 1);
        assert!(matches!(r, Err(Error::Input(_))));
    }
}

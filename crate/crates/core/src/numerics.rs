//! Dense row-major `f32` primitives.
//!
//! Everything above this module (attention, scoring, fusing, spatial
//! reduction) is written against [`Matrix`]. Inner products accumulate in
//! `f64` and round once on store.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows. An empty slice yields `0 x 0`.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single row vector.
    pub fn row_vector(values: &[f32]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f32) {
        self.data[i * self.cols + j] = value;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact(0) panics, and a zero-width matrix still has rows.
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn column_slice(&self, start: usize, width: usize) -> Result<Matrix> {
        if start + width > self.cols {
            return Err(Error::shape(
                "column_slice",
                format!("at most {} columns", self.cols),
                start + width,
            ));
        }
        let mut data = Vec::with_capacity(self.rows * width);
        for r in self.iter_rows() {
            data.extend_from_slice(&r[start..start + width]);
        }
        Ok(Matrix {
            rows: self.rows,
            cols: width,
            data,
        })
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape("hconcat", self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Vertical concatenation of `self` over `other`.
    pub fn vconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape("vconcat", self.cols, other.cols));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, factor: f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f32 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// `a x b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("rhs with {} rows", a.cols),
            format!("{} rows", b.rows),
        ));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(n, m);
    let mut acc = vec![0.0f64; m];
    for i in 0..n {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let a_row = a.row(i);
        for (p, &a_ip) in a_row.iter().enumerate().take(k) {
            let a_ip = a_ip as f64;
            for (slot, &b_pj) in acc.iter_mut().zip(b.row(p)) {
                *slot += a_ip * b_pj as f64;
            }
        }
        for (o, v) in out.row_mut(i).iter_mut().zip(&acc) {
            *o = *v as f32;
        }
    }
    Ok(out)
}

/// `a x bᵀ`, i.e. row-by-row inner products. Used for `Q Kᵀ`.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape("matmul_transposed", a.cols, b.cols));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(a_row, b.row(j)) as f32;
        }
    }
    Ok(out)
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn l2_norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// `x W + b` with `W` stored `[in, out]`.
pub fn linear(x: &Matrix, weight: &Matrix, bias: &[f32]) -> Result<Matrix> {
    if bias.len() != weight.cols {
        return Err(Error::shape("linear bias", weight.cols, bias.len()));
    }
    let mut out = matmul(x, weight)?;
    for i in 0..out.rows {
        for (o, b) in out.row_mut(i).iter_mut().zip(bias) {
            *o += b;
        }
    }
    Ok(out)
}

/// Row-wise `softmax(scale * a)` with row-max subtraction.
pub fn softmax_rows(a: &Matrix, scale: f32) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i), scale);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f32], scale: f32) {
    if row.is_empty() {
        return;
    }
    let max = row
        .iter()
        .map(|&v| v * scale)
        .fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = row
        .iter()
        .map(|&v| ((v * scale - max) as f64).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    for (o, e) in row.iter_mut().zip(exps) {
        *o = (e / sum) as f32;
    }
}

/// Per-row normalization with population variance, then `gamma * x + beta`.
pub fn layernorm(x: &Matrix, gamma: &[f32], beta: &[f32], eps: f32) -> Result<Matrix> {
    if gamma.len() != x.cols || beta.len() != x.cols {
        return Err(Error::shape(
            "layernorm",
            format!("gamma/beta of length {}", x.cols),
            format!("{}/{}", gamma.len(), beta.len()),
        ));
    }
    let mut out = Matrix::zeros(x.rows, x.cols);
    if x.cols == 0 {
        return Ok(out);
    }
    let n = x.cols as f64;
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row
            .iter()
            .map(|&v| {
                let c = v as f64 - mean;
                c * c
            })
            .sum::<f64>()
            / n;
        let denom = (var + eps as f64).sqrt();
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            let centered = row[j] as f64 - mean;
            // A constant row with eps = 0 has 0/0 here; its normalized value is 0.
            let normalized = if denom > 0.0 { centered / denom } else { 0.0 };
            *o = (normalized * gamma[j] as f64 + beta[j] as f64) as f32;
        }
    }
    Ok(out)
}

/// Exact (erf-based) GELU.
pub fn gelu(x: &Matrix) -> Matrix {
    x.map(|v| {
        let v = v as f64;
        (0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2))) as f32
    })
}

/// Selects rows by index, in the order given.
pub fn gather_rows(x: &Matrix, indices: &[usize]) -> Result<Matrix> {
    let mut data = Vec::with_capacity(indices.len() * x.cols);
    for &i in indices {
        if i >= x.rows {
            return Err(Error::Input(format!(
                "gather index {i} out of range for {} rows",
                x.rows
            )));
        }
        data.extend_from_slice(x.row(i));
    }
    Ok(Matrix {
        rows: indices.len(),
        cols: x.cols,
        data,
    })
}

/// Writes row `k` of `src` into row `indices[k]` of a `rows x src.cols` zero
/// matrix.
pub fn scatter_rows(src: &Matrix, indices: &[usize], rows: usize) -> Result<Matrix> {
    if indices.len() != src.rows {
        return Err(Error::shape("scatter_rows", src.rows, indices.len()));
    }
    let mut out = Matrix::zeros(rows, src.cols);
    for (k, &i) in indices.iter().enumerate() {
        if i >= rows {
            return Err(Error::Input(format!(
                "scatter index {i} out of range for {rows} rows"
            )));
        }
        out.row_mut(i).copy_from_slice(src.row(k));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn triple_loop(a: &Matrix, b: &Matrix) -> Vec<f64> {
        let mut out = vec![0.0f64; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                for p in 0..a.cols() {
                    out[i * b.cols() + j] += a.get(i, p) as f64 * b.get(p, j) as f64;
                }
            }
        }
        out
    }

    fn assert_close_rel(actual: &Matrix, expected: &[f64], tol: f64) {
        for (a, e) in actual.data().iter().zip(expected) {
            let scale = e.abs().max(1.0);
            assert!(((*a as f64) - e).abs() <= tol * scale, "{a} vs {e}");
        }
    }

    #[test]
    fn matmul_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 3, 3);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), (2, 1));
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_random_8x8_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 8, 8);
        let b = random_matrix(&mut rng, 8, 8);
        assert_close_rel(&matmul(&a, &b).unwrap(), &triple_loop(&a, &b), 1e-5);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn matmul_transposed_matches_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 5, 4);
        let b = random_matrix(&mut rng, 6, 4);
        let via = matmul(&a, &b.transpose()).unwrap();
        assert!(matmul_transposed(&a, &b).unwrap().max_abs_diff(&via) < 1e-6);
    }

    #[test]
    fn softmax_zero_row_is_uniform() {
        let s = softmax_rows(&Matrix::zeros(1, 4), 1.0);
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn softmax_does_not_overflow() {
        let s = softmax_rows(&Matrix::row_vector(&[1000.0, 0.0]), 1.0);
        assert!((s.get(0, 0) - 1.0).abs() < 1e-6);
        assert!(s.get(0, 1).abs() < 1e-6);
    }

    #[test]
    fn softmax_known_values() {
        // exp(1), exp(2), exp(3) over their sum.
        let s = softmax_rows(&Matrix::row_vector(&[1.0, 2.0, 3.0]), 1.0);
        for (a, e) in s.data().iter().zip([0.09003057, 0.24472847, 0.66524096]) {
            assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn layernorm_constant_row_is_zero() {
        let x = Matrix::filled(1, 4, 3.5);
        let y = layernorm(&x, &[1.0; 4], &[0.0; 4], 1e-6).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layernorm_hand_example() {
        let x = Matrix::row_vector(&[1.0, 2.0, 3.0]);
        let y = layernorm(&x, &[1.0; 3], &[0.0; 3], 0.0).unwrap();
        for (a, e) in y.data().iter().zip([-1.2247449, 0.0, 1.2247449]) {
            assert!((a - e).abs() < 1e-5);
        }
    }

    #[test]
    fn layernorm_zero_gamma_broadcasts_beta() {
        let x = Matrix::from_rows(&[[1.0, -4.0, 9.0], [0.5, 0.25, 2.0]]).unwrap();
        let beta = [0.1, -0.2, 0.3];
        let y = layernorm(&x, &[0.0; 3], &beta, 1e-6).unwrap();
        for r in y.iter_rows() {
            assert_eq!(r, &beta);
        }
    }

    #[test]
    fn layernorm_length_mismatch() {
        let x = Matrix::zeros(2, 3);
        assert!(layernorm(&x, &[1.0; 2], &[0.0; 3], 1e-6).is_err());
    }

    #[test]
    fn gelu_reference_points() {
        let y = gelu(&Matrix::row_vector(&[0.0, 1.0, -1.0]));
        // 0.5 * x * (1 + erf(x / sqrt 2)), erf(1/sqrt 2) = 0.6826894921.
        assert_eq!(y.get(0, 0), 0.0);
        assert!((y.get(0, 1) - 0.8413447).abs() < 1e-6);
        assert!((y.get(0, 2) + 0.1586553).abs() < 1e-6);
    }

    #[test]
    fn gather_out_of_range() {
        assert!(gather_rows(&Matrix::zeros(2, 2), &[2]).is_err());
    }

    proptest! {
        #[test]
        fn matmul_matches_oracle(n in 1usize..=16, k in 1usize..=16, m in 1usize..=16, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, n, k);
            let b = random_matrix(&mut rng, k, m);
            assert_close_rel(&matmul(&a, &b).unwrap(), &triple_loop(&a, &b), 1e-5);
        }

        #[test]
        fn softmax_rows_sum_to_one(values in proptest::collection::vec(-50.0f32..50.0, 1..20), scale in 0.01f32..4.0) {
            let s = softmax_rows(&Matrix::row_vector(&values), scale);
            let sum: f64 = s.data().iter().map(|&v| v as f64).sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(s.data().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn softmax_permutation_equivariant(values in proptest::collection::vec(-10.0f32..10.0, 2..12), rot in 0usize..12) {
            let n = values.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let permuted: Vec<f32> = perm.iter().map(|&i| values[i]).collect();
            let a = softmax_rows(&Matrix::row_vector(&values), 1.0);
            let b = softmax_rows(&Matrix::row_vector(&permuted), 1.0);
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((b.get(0, k) - a.get(0, i)).abs() < 1e-7);
            }
        }

        #[test]
        fn gather_then_scatter_restores_selected_rows(rows in 1usize..12, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, rows, 3);
            let idx: Vec<usize> = (0..rows).filter(|_| rng.random_bool(0.5)).collect();
            let back = scatter_rows(&gather_rows(&x, &idx).unwrap(), &idx, rows).unwrap();
            for &i in &idx {
                prop_assert_eq!(back.row(i), x.row(i));
            }
        }
    }
}

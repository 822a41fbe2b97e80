//! Dense numeric kernels with explicit backward rules.
//!
//! There is no autodiff tape: the training pipeline is a fixed composition
//! of the kernels below, and the model module replays them in reverse order
//! by hand. Every kernel therefore exposes exactly the gradients that
//! composition needs. All math is f64.

use rand::Rng;
use rayon::prelude::*;

use crate::graph::CsrMatrix;
use crate::{Error, Result};

/// Row-major dense f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(
            rows.iter().all(|r| r.len() == n_cols),
            "ragged row lengths"
        );
        DenseMatrix {
            rows: n_rows,
            cols: n_cols,
            data: rows.into_iter().flatten().collect(),
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// self += other, elementwise.
    pub fn add_assign(&mut self, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch(
                "add_assign",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// self += alpha * other, elementwise.
    pub fn axpy(&mut self, alpha: f64, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch(
                "axpy",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    #[cfg(debug_assertions)]
    fn debug_check_finite(&self, op: &str) {
        assert!(self.is_finite(), "{op} produced a non-finite entry");
    }

    #[cfg(not(debug_assertions))]
    fn debug_check_finite(&self, _op: &str) {}
}

fn shape_mismatch(op: &str, details: String) -> Error {
    Error::ShapeMismatch {
        op: op.to_string(),
        details,
    }
}

/// A learnable matrix with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: DenseMatrix,
    pub grad: DenseMatrix,
}

impl Parameter {
    pub fn new(name: &str, value: DenseMatrix) -> Self {
        let grad = DenseMatrix::zeros(value.rows(), value.cols());
        Parameter {
            name: name.to_string(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// grad += contribution; shapes fixed at construction.
    pub fn accumulate(&mut self, contribution: &DenseMatrix) -> Result<()> {
        self.grad.add_assign(contribution)
    }
}

/// Sparse-dense product Y = A X. Backward for the X argument is
/// grad_X = Aᵀ · upstream, which for the symmetric normalized adjacency is
/// just another `spmm` with the same matrix.
pub fn spmm(a: &CsrMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n_cols() != x.rows() {
        return Err(shape_mismatch(
            "spmm",
            format!("A is {}x{}, X is {:?}", a.n_rows(), a.n_cols(), x.shape()),
        ));
    }
    let cols = x.cols();
    let mut out = DenseMatrix::zeros(a.n_rows(), cols);
    out.data
        .par_chunks_mut(cols.max(1))
        .enumerate()
        .for_each(|(r, out_row)| {
            let (idx, vals) = a.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                let x_row = x.row(c as usize);
                for (o, &xv) in out_row.iter_mut().zip(x_row) {
                    *o += v * xv;
                }
            }
        });
    out.debug_check_finite("spmm");
    Ok(out)
}

/// Y = A · B.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(shape_mismatch(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = DenseMatrix::zeros(n, m);
    out.data
        .par_chunks_mut(m.max(1))
        .enumerate()
        .for_each(|(r, out_row)| {
            let a_row = a.row(r);
            for p in 0..k {
                let coef = a_row[p];
                if coef == 0.0 {
                    continue;
                }
                for (o, &bv) in out_row.iter_mut().zip(b.row(p)) {
                    *o += coef * bv;
                }
            }
        });
    out.debug_check_finite("matmul");
    Ok(out)
}

/// Y = Aᵀ · B. This is the grad_W rule for an affine map X·W with input X=A
/// and upstream gradient B.
pub fn matmul_at_b(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() != b.rows() {
        return Err(shape_mismatch(
            "matmul_at_b",
            format!("{:?}ᵀ x {:?}", a.shape(), b.shape()),
        ));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = DenseMatrix::zeros(k, m);
    out.data
        .par_chunks_mut(m.max(1))
        .enumerate()
        .for_each(|(i, out_row)| {
            for r in 0..n {
                let coef = a.get(r, i);
                if coef == 0.0 {
                    continue;
                }
                for (o, &bv) in out_row.iter_mut().zip(b.row(r)) {
                    *o += coef * bv;
                }
            }
        });
    out.debug_check_finite("matmul_at_b");
    Ok(out)
}

/// Y = A · Bᵀ. This is the grad_X rule for an affine map X·W with upstream
/// gradient A and weights B.
pub fn matmul_a_bt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(shape_mismatch(
            "matmul_a_bt",
            format!("{:?} x {:?}ᵀ", a.shape(), b.shape()),
        ));
    }
    let (n, m) = (a.rows(), b.rows());
    let mut out = DenseMatrix::zeros(n, m);
    out.data
        .par_chunks_mut(m.max(1))
        .enumerate()
        .for_each(|(r, out_row)| {
            let a_row = a.row(r);
            for (o, j) in out_row.iter_mut().zip(0..m) {
                let b_row = b.row(j);
                *o = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum();
            }
        });
    out.debug_check_finite("matmul_a_bt");
    Ok(out)
}

/// In-place row-broadcast bias add. Backward for the bias is
/// [`column_sums`] of the upstream gradient.
pub fn add_bias_rows(x: &mut DenseMatrix, bias: &[f64]) -> Result<()> {
    if bias.len() != x.cols() {
        return Err(shape_mismatch(
            "add_bias_rows",
            format!("bias len {} vs {} cols", bias.len(), x.cols()),
        ));
    }
    for r in 0..x.rows() {
        for (v, b) in x.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(())
}

pub fn column_sums(x: &DenseMatrix) -> Vec<f64> {
    let mut sums = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (s, &v) in sums.iter_mut().zip(x.row(r)) {
            *s += v;
        }
    }
    sums
}

/// Elementwise max(0, x).
pub fn relu(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gates the upstream gradient on the pre-activation: zero wherever
/// pre ≤ 0 (subgradient 0 at the kink).
pub fn relu_backward(pre: &DenseMatrix, upstream: &DenseMatrix) -> Result<DenseMatrix> {
    if pre.shape() != upstream.shape() {
        return Err(shape_mismatch(
            "relu_backward",
            format!("{:?} vs {:?}", pre.shape(), upstream.shape()),
        ));
    }
    let mut out = upstream.clone();
    for (o, &p) in out.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *o = 0.0;
        }
    }
    Ok(out)
}

/// Inverted-dropout mask: kept entries are scaled by 1/keep_p so the
/// expected activation is unchanged. The mask is sampled row-major from the
/// given RNG and reused verbatim in the backward pass.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
    keep_p: f64,
}

impl DropoutMask {
    pub fn sample<R: Rng>(rows: usize, cols: usize, keep_p: f64, rng: &mut R) -> Self {
        assert!(
            keep_p > 0.0 && keep_p <= 1.0,
            "keep probability {keep_p} outside (0, 1]"
        );
        let keep = (0..rows * cols).map(|_| rng.gen::<f64>() < keep_p).collect();
        DropoutMask {
            rows,
            cols,
            keep,
            keep_p,
        }
    }

    pub fn keep_p(&self) -> f64 {
        self.keep_p
    }

    fn scale_by_mask(&self, x: &DenseMatrix, op: &str) -> Result<DenseMatrix> {
        if x.shape() != (self.rows, self.cols) {
            return Err(shape_mismatch(
                op,
                format!("mask {:?} vs input {:?}", (self.rows, self.cols), x.shape()),
            ));
        }
        let inv = 1.0 / self.keep_p;
        let mut out = x.clone();
        for (v, &k) in out.data_mut().iter_mut().zip(&self.keep) {
            *v = if k { *v * inv } else { 0.0 };
        }
        Ok(out)
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.scale_by_mask(x, "dropout")
    }

    /// The backward rule is identical to the forward scaling: the same
    /// entries survive, with the same 1/keep_p factor.
    pub fn backward(&self, upstream: &DenseMatrix) -> Result<DenseMatrix> {
        self.scale_by_mask(upstream, "dropout_backward")
    }
}

/// Stable log(Σ exp(row)) via max subtraction; safe for entries up to ±1e3.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise stable softmax.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Negative log softmax probability of `target` for one logits row, plus
/// the gradient of that loss with respect to the row
/// (softmax(row) - onehot(target)).
pub fn cross_entropy_row(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::TargetOutOfRange {
            target,
            n_classes: logits.len(),
        });
    }
    let lse = log_sum_exp(logits);
    let loss = lse - logits[target];
    let mut grad: Vec<f64> = logits.iter().map(|&v| (v - lse).exp()).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Euclidean distance between two equal-length vectors.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Gradient of `upstream * d(a, b)` with respect to a (the b gradient is
/// its negation). At d = 0 the subgradient 0 is used.
pub fn euclidean_distance_backward(a: &[f64], b: &[f64], upstream: f64) -> Vec<f64> {
    let d = euclidean_distance(a, b);
    if d == 0.0 {
        return vec![0.0; a.len()];
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| upstream * (x - y) / d)
        .collect()
}

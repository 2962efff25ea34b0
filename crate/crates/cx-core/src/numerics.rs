//! Dense f64 vectors and matrices, stable softmax, rank-1 orthogonal
//! projection, symmetrized KL, and seeded randomness.
//!
//! Everything here is pure and shape-checked at the call boundary. All
//! downstream math (contrastive directions, nullspace projections, behavior
//! measures) reduces to the handful of primitives in this module.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for treating two floats as equal.
pub const EQ_TOL: f64 = 1e-9;
/// Tolerance for projection identities (idempotence, gap preservation).
pub const PROJECTION_TOL: f64 = 1e-10;
/// Probability floor applied by the intervention pipeline before logs.
pub const PROB_CLAMP: f64 = 1e-12;
/// Squared-norm threshold below which a contrastive direction is degenerate.
pub const DIRECTION_NORM_SQ_MIN: f64 = 1e-18;

/// Dense vector of finite f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput("vector must be non-empty".into()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value {} at index {i}",
                data[i]
            )));
        }
        Ok(Vector(data))
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_same_len(self.len(), other.len(), "dot")?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, a: f64) -> Vector {
        Vector(self.0.iter().map(|v| a * v).collect())
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        check_same_len(self.len(), other.len(), "add")?;
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        check_same_len(self.len(), other.len(), "sub")?;
        Ok(Vector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// In-place `self -= a * other`.
    pub fn axpy_neg(&mut self, a: f64, other: &Vector) -> Result<()> {
        check_same_len(self.len(), other.len(), "axpy")?;
        for (s, o) in self.0.iter_mut().zip(&other.0) {
            *s -= a * o;
        }
        Ok(())
    }

    /// Largest absolute difference to `other`.
    pub fn max_abs_diff(&self, other: &Vector) -> Result<f64> {
        check_same_len(self.len(), other.len(), "max_abs_diff")?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_same_len(a: usize, b: usize, op: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{op}: lengths {a} and {b} differ"
        )))
    }
}

/// Dense row-major matrix of finite f64 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("matrix dimensions must be > 0".into()));
        }
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_vector(&self, r: usize) -> Vector {
        Vector(self.row(r).to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Matrix-vector product `self * v`.
    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "matvec: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let out = (0..self.rows).map(|r| dot(self.row(r), &v.0)).collect();
        Ok(Vector(out))
    }

    /// Transposed product `self^T * v`.
    pub fn matvec_t(&self, v: &Vector) -> Result<Vector> {
        if v.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "matvec_t: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let vr = v.0[r];
            if vr == 0.0 {
                continue;
            }
            for (o, m) in out.iter_mut().zip(self.row(r)) {
                *o += vr * m;
            }
        }
        Ok(Vector(out))
    }

    /// In-place `self -= v v^T` for a vector of matching dimension.
    pub fn sub_outer(&mut self, v: &Vector) -> Result<()> {
        if self.rows != self.cols || v.len() != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "sub_outer: matrix is {}x{}, vector has length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let n = self.rows;
        for r in 0..n {
            for c in 0..n {
                self.data[r * n + c] -= v.0[r] * v.0[c];
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "max_abs_diff: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Key for a deterministic random stream: identical (seed, stream) pairs
/// yield identical draw sequences. Parallel workers derive child streams
/// from their worker index so fan-out never perturbs results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngKey {
    pub seed: u64,
    pub stream: u64,
}

impl RngKey {
    pub fn new(seed: u64) -> Self {
        RngKey { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        RngKey { seed, stream }
    }

    /// Child key for worker `index`; deterministic in (seed, stream, index).
    pub fn child(&self, index: u64) -> RngKey {
        RngKey {
            seed: self.seed,
            stream: self
                .stream
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(index)
                .wrapping_add(1),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Numerically stable softmax via max-subtraction.
///
/// Output entries lie in (0,1) and sum to 1 within 1e-12; shift-invariant to
/// machine precision.
pub fn softmax(logits: &Vector) -> Result<Vector> {
    // Vector construction guarantees finiteness; re-check to catch callers
    // that mutated storage directly.
    if logits.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("softmax: non-finite logit".into()));
    }
    let max = logits.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.0.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(Vector(exps.into_iter().map(|e| e / sum).collect()))
}

/// Orthogonal projection of `h` onto the span of `u`: `(u.h / u.u) u`.
pub fn project_onto(h: &Vector, u: &Vector) -> Result<Vector> {
    check_same_len(h.len(), u.len(), "project_onto")?;
    let norm_sq = u.norm_sq();
    if norm_sq < DIRECTION_NORM_SQ_MIN {
        return Err(Error::DegenerateDirection(format!(
            "projection direction has squared norm {norm_sq:e}"
        )));
    }
    let coeff = dot(&h.0, &u.0) / norm_sq;
    Ok(u.scale(coeff))
}

/// Symmetrized Kullback-Leibler divergence `KL(p||q) + KL(q||p)`.
///
/// Inputs must be strictly positive distributions; callers on the
/// intervention path clamp with [`clamp_distribution`] first.
pub fn sym_kl(p: &Vector, q: &Vector) -> Result<f64> {
    check_same_len(p.len(), q.len(), "sym_kl")?;
    for (name, v) in [("p", p), ("q", q)] {
        if v.0.iter().any(|x| *x <= 0.0 || !x.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "{name} must have strictly positive finite entries"
            )));
        }
    }
    let mut total = 0.0;
    for (pi, qi) in p.0.iter().zip(&q.0) {
        let lr = (pi / qi).ln();
        total += pi * lr - qi * lr;
    }
    Ok(total.max(0.0))
}

/// Floor every entry at [`PROB_CLAMP`] so softmax underflow cannot poison
/// the logs inside [`sym_kl`]. Used by the intervention pipeline only.
pub fn clamp_distribution(p: &Vector) -> Vector {
    Vector(p.0.iter().map(|v| v.max(PROB_CLAMP)).collect())
}

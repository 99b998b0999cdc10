//! Dense 64-bit linear algebra, seeded randomness and parameter initialization.
//!
//! Everything here is deliberately small: row-major `Vec<f64>` storage, plain
//! loops, no BLAS. The recurrent kernels elsewhere in the crate only ever need
//! matrix-vector products, outer products and row scaling.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, shape_err, Error, Result};

/// A non-empty vector of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RealVector(Vec<f64>);

impl RealVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Contract("vector must be non-empty".into()));
        }
        if !all_finite(&data) {
            return Err(Error::Numeric("vector entries".into()));
        }
        Ok(RealVector(data))
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "vector length must be positive");
        RealVector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        assert!(len > 0, "vector length must be positive");
        RealVector(vec![value; len])
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> f64) -> Self {
        assert!(len > 0, "vector length must be positive");
        RealVector((0..len).map(f).collect())
    }

    /// One-hot vector with a 1 at `index`.
    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut v = Self::zeros(len);
        v.0[index] = 1.0;
        v
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn fill(&mut self, value: f64) {
        self.0.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.0)
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.0)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }
}

impl Deref for RealVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for RealVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Row-major dense matrix of finite reals. Serialized as nested rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        RealMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Contract("matrix dimensions must be positive".into()));
        }
        check_len("RealMatrix::from_vec", rows * cols, data.len())?;
        if !all_finite(&data) {
            return Err(Error::Numeric("matrix entries".into()));
        }
        Ok(RealMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("RealMatrix::from_rows", "equal row lengths", "ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    pub fn transpose(&self) -> RealMatrix {
        RealMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self += alpha * (u ⊗ v)`.
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (row, &ui) in self.data.chunks_mut(self.cols).zip(u) {
            let a = alpha * ui;
            if a != 0.0 {
                row.iter_mut().zip(v).for_each(|(r, &vj)| *r += a * vj);
            }
        }
    }

    /// `self = diag(scale) · self`.
    pub fn scale_rows(&mut self, scale: &[f64]) {
        debug_assert_eq!(scale.len(), self.rows);
        for (row, &s) in self.data.chunks_mut(self.cols).zip(scale) {
            row.iter_mut().for_each(|r| *r *= s);
        }
    }

    /// `self += diag(scale) · other`.
    pub fn add_row_scaled(&mut self, scale: &[f64], other: &RealMatrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for ((row, orow), &s) in self.data.chunks_mut(self.cols).zip(other.data.chunks(other.cols)).zip(scale) {
            if s != 0.0 {
                row.iter_mut().zip(orow).for_each(|(r, &o)| *r += s * o);
            }
        }
    }

    /// `out = self · v` without shape checks beyond debug assertions.
    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks(self.cols)) {
            *o = dot(row, v);
        }
    }

    /// `out += selfᵀ · v`.
    pub fn matvec_t_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, &vi) in self.data.chunks(self.cols).zip(v) {
            if vi != 0.0 {
                out.iter_mut().zip(row).for_each(|(o, &r)| *o += vi * r);
            }
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &RealMatrix) -> Result<RealMatrix> {
        if self.cols != other.rows {
            return Err(shape_err("matmul", format!("inner dimension {}", self.cols), other.rows));
        }
        let mut out = RealMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    orow.iter_mut().zip(other.row(k)).for_each(|(o, &b)| *o += a * b);
                }
            }
        }
        Ok(out)
    }
}

impl From<RealMatrix> for Vec<Vec<f64>> {
    fn from(m: RealMatrix) -> Self {
        m.to_rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for RealMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        RealMatrix::from_rows(&rows)
    }
}

impl Index<(usize, usize)> for RealMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RealMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Dense three-index tensor stored with the last index fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(a: usize, b: usize, c: usize) -> Self {
        Tensor3 { dims: [a, b, c], data: vec![0.0; a * b * c] }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The `b × c` slab for a fixed first index.
    pub fn slab(&self, k: usize) -> &[f64] {
        let n = self.dims[1] * self.dims[2];
        &self.data[k * n..(k + 1) * n]
    }

    pub fn slab_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.dims[1] * self.dims[2];
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }
}

impl Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;
    fn index(&self, (k, i, j): (usize, usize, usize)) -> &f64 {
        &self.data[(k * self.dims[1] + i) * self.dims[2] + j]
    }
}

impl IndexMut<(usize, usize, usize)> for Tensor3 {
    fn index_mut(&mut self, (k, i, j): (usize, usize, usize)) -> &mut f64 {
        &mut self.data[(k * self.dims[1] + i) * self.dims[2] + j]
    }
}

/// `m · v`.
pub fn matvec(m: &RealMatrix, v: &[f64]) -> Result<RealVector> {
    check_len("matvec", m.cols(), v.len())?;
    let mut out = RealVector::zeros(m.rows());
    m.matvec_into(v, &mut out);
    Ok(out)
}

/// `u ⊗ v`, the `u.len() × v.len()` matrix with entries `u_i v_j`.
pub fn outer(u: &[f64], v: &[f64]) -> RealMatrix {
    let mut m = RealMatrix::zeros(u.len(), v.len());
    m.add_outer(1.0, u, v);
    m
}

/// Inner product with four independent partial sums so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

pub fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Seeded, platform-independent pseudo-random generator (ChaCha8).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Rng { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Derive an independent generator for a named sub-stream.
    pub fn fork(&mut self) -> Rng {
        Rng::seed_from_u64(self.inner.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    /// Uniform integer on `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..=hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.gen::<f64>() < p
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.inner.gen::<f64>();
        let u2 = self.inner.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Index drawn from a categorical distribution given by `probs`.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.inner.gen::<f64>();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

/// Matrix with i.i.d. entries uniform on `[-scale, scale]`.
pub fn init_uniform(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Result<RealMatrix> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("init scale must be positive, got {scale}")));
    }
    Ok(RealMatrix::from_fn(rows, cols, |_, _| rng.uniform(-scale, scale)))
}

/// Vector with i.i.d. entries uniform on `[-scale, scale]`.
pub fn init_uniform_vector(rng: &mut Rng, len: usize, scale: f64) -> Result<RealVector> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("init scale must be positive, got {scale}")));
    }
    Ok(RealVector::from_fn(len, |_| rng.uniform(-scale, scale)))
}

/// Default fan-in scale `1/√fan_in`.
pub fn fan_in_scale(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

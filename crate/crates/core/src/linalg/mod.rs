//! Dense tensor/matrix arithmetic, seeded Gaussian sampling, empirical
//! covariance and trace. Everything is `f64`; values are immutable once
//! constructed and safe to share across threads.

mod eigen;

pub use eigen::symmetric_eigenvalues;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense multi-dimensional array of 64-bit floats in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid("tensor shape dimensions must be positive"));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    /// One-dimensional tensor over `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Squared Euclidean norm of the flattened data.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Dense row-major matrix of 64-bit floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if rows * cols != data.len() {
            return Err(Error::invalid(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self.get(i, i)).collect()
    }

    /// Sum of squares of all entries.
    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Counter-derived random stream: identical `(seed, stream)` pairs yield
/// identical sample sequences on every run and under any thread schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, stream: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Disjoint child stream for work item `index`. Parallel callers derive
    /// one substream per index instead of sharing mutable state.
    pub fn substream(&self, index: u64) -> RngStream {
        RngStream {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(index)),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// `dim` independent draws from N(0, sigma^2), deterministic given `rng`.
pub fn sample_gaussian(dim: usize, sigma: f64, rng: &RngStream) -> Result<Tensor> {
    if dim == 0 {
        return Err(Error::invalid("sample_gaussian: dim must be positive"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "sample_gaussian: sigma must be non-negative, got {sigma}"
        )));
    }
    let mut r = rng.rng();
    let data = (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            sigma * z
        })
        .collect();
    Ok(Tensor {
        shape: vec![dim],
        data,
    })
}

/// Unbiased sample covariance (divisor N-1) of `samples`, each of length m.
/// The result is constructed symmetrically: `C[i][j]` and `C[j][i]` are the
/// same floating-point value.
pub fn empirical_covariance(samples: &[Tensor]) -> Result<Matrix> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "empirical_covariance: need at least 2 samples, got {n}"
        )));
    }
    let m = samples[0].len();
    for (k, s) in samples.iter().enumerate() {
        if s.len() != m {
            return Err(Error::invalid(format!(
                "empirical_covariance: sample {k} has length {}, expected {m}",
                s.len()
            )));
        }
    }

    // center against the first sample before averaging: identical samples
    // then cancel exactly instead of leaving rounding residue
    let shift = samples[0].data();
    let mut mean = vec![0.0f64; m];
    for s in samples {
        for ((acc, v), s0) in mean.iter_mut().zip(s.data()).zip(shift) {
            *acc += v - s0;
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }

    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            s.data()
                .iter()
                .zip(&mean)
                .zip(shift)
                .map(|((v, mu), s0)| (v - s0) - mu)
                .collect()
        })
        .collect();

    let denom = (n - 1) as f64;
    let rows = crate::parallel::map_indexed(m, |i| {
        let mut row = vec![0.0f64; m];
        for j in i..m {
            let mut acc = 0.0;
            for c in &centered {
                acc += c[i] * c[j];
            }
            row[j] = acc / denom;
        }
        row
    });

    let mut out = Matrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for j in i..m {
            let v = row[j];
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}

/// Sum of diagonal entries of a square matrix.
pub fn trace(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "trace: matrix is {}x{}, expected square",
            m.rows, m.cols
        )));
    }
    Ok((0..m.rows).map(|i| m.get(i, i)).sum())
}

/// Standard matrix product A·B.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::invalid(format!(
            "matmul: inner dimensions disagree ({}x{} times {}x{})",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let rows = crate::parallel::map_indexed(m, |i| {
        let mut row = vec![0.0f64; n];
        let ar = a.row(i);
        for (p, &av) in ar.iter().enumerate().take(k) {
            let br = b.row(p);
            for (out, &bv) in row.iter_mut().zip(br) {
                *out += av * bv;
            }
        }
        row
    });
    Ok(Matrix {
        rows: m,
        cols: n,
        data: rows.into_iter().flatten().collect(),
    })
}

/// A·Bᵀ without materializing the transpose.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::invalid(format!(
            "matmul_transposed: column counts disagree ({}x{} times ({}x{})^T)",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let rows = crate::parallel::map_indexed(a.rows, |i| {
        let ar = a.row(i);
        (0..b.rows)
            .map(|j| dot(ar, b.row(j)))
            .collect::<Vec<f64>>()
    });
    Ok(Matrix {
        rows: a.rows,
        cols: b.rows,
        data: rows.into_iter().flatten().collect(),
    })
}

/// A·Aᵀ with exact symmetry: each off-diagonal pair shares one dot product.
pub fn sym_gram(a: &Matrix) -> Matrix {
    let m = a.rows;
    let rows = crate::parallel::map_indexed(m, |i| {
        let ar = a.row(i);
        (i..m).map(|j| dot(ar, a.row(j))).collect::<Vec<f64>>()
    });
    let mut out = Matrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Checks the covariance-matrix contract: square, symmetric within 1e-9
/// relative, smallest eigenvalue >= -1e-9 * trace.
pub fn validate_covariance(c: &Matrix) -> Result<()> {
    if !c.is_square() {
        return Err(Error::invalid("covariance must be square"));
    }
    let scale = c
        .data
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-300);
    for i in 0..c.rows {
        for j in (i + 1)..c.cols {
            let d = (c.get(i, j) - c.get(j, i)).abs();
            if d > 1e-9 * scale {
                return Err(Error::invalid(format!(
                    "covariance asymmetric at ({i},{j}): {d:e} relative to scale {scale:e}"
                )));
            }
        }
    }
    let tr = trace(c)?;
    let eigs = symmetric_eigenvalues(c)?;
    let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-9 * tr.max(1e-300) {
        return Err(Error::invalid(format!(
            "covariance not PSD: min eigenvalue {min:e} with trace {tr:e}"
        )));
    }
    Ok(())
}

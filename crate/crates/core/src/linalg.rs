//! Dense symmetric positive-definite kernels for the multivariate engine.
//!
//! Dimensions here are small (at most a few dozen), so everything is stored
//! row-major in a flat `Vec<f64>` and factored with an unblocked Cholesky.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot_index} <= 0)")]
    NotPositiveDefinite { pivot_index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid dimension {0}")]
    InvalidDimension(usize),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// A symmetric `d x d` matrix, symmetrized on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SpdMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SpdMatrix {
    /// Builds from row-major entries, replacing `m` with `(m + m^T) / 2`.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(LinalgError::InvalidDimension(dim));
        }
        if data.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let mut m = Self { dim, data };
        m.symmetrize();
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(LinalgError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = scale;
        }
        Self { dim, data }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut m = Self::scaled_identity(dim, 0.0);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * dim + i] = v;
        }
        m
    }

    /// `v v^T`.
    pub fn outer(v: &[f64]) -> Self {
        let dim = v.len();
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                data[i * dim + j] = v[i] * v[j];
            }
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Adds `eps` to every diagonal entry.
    pub fn add_jitter(&self, eps: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.dim {
            m.data[i * self.dim + i] += eps;
        }
        m
    }

    /// Largest absolute asymmetry `|m_ij - m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check_dim(v.len())?;
        Ok(self.data.chunks(self.dim).map(|row| dot(row, v)).collect())
    }

    fn symmetrize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
                self.data[i * d + j] = avg;
                self.data[j * d + i] = avg;
            }
        }
    }

    fn check_dim(&self, found: usize) -> Result<(), LinalgError> {
        if found != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for SpdMatrix {
    type Error = LinalgError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(&rows)
    }
}

impl From<SpdMatrix> for Vec<Vec<f64>> {
    fn from(m: SpdMatrix) -> Self {
        m.rows()
    }
}

/// Lower-triangular Cholesky factor `L` with `L L^T = m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// `2 * sum(ln L_ii)`.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.get(i, i).ln()).sum::<f64>()
    }

    /// Solves `L x = b` in place.
    fn forward(&self, b: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let mut s = b[i];
            for k in 0..i {
                s -= self.data[i * d + k] * b[k];
            }
            b[i] = s / self.data[i * d + i];
        }
    }

    /// Solves `L^T x = b` in place.
    fn backward(&self, b: &mut [f64]) {
        let d = self.dim;
        for i in (0..d).rev() {
            let mut s = b[i];
            for k in i + 1..d {
                s -= self.data[k * d + i] * b[k];
            }
            b[i] = s / self.data[i * d + i];
        }
    }

    /// Solves `(L L^T) x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if b.len() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                found: b.len(),
            });
        }
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        Ok(x)
    }

    /// `L L^T`.
    pub fn reconstruct(&self) -> SpdMatrix {
        let d = self.dim;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                data[i * d + j] = s;
                data[j * d + i] = s;
            }
        }
        SpdMatrix { dim: d, data }
    }
}

pub fn cholesky(m: &SpdMatrix) -> Result<LowerTriangular, LinalgError> {
    let d = m.dim;
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = m.get(j, j);
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if !(diag.is_finite() && diag > 0.0) {
            return Err(LinalgError::NotPositiveDefinite { pivot_index: j });
        }
        let ljj = diag.sqrt();
        l[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = m.get(i, j);
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Ok(LowerTriangular { dim: d, data: l })
}

/// Inverse and log-determinant from one Cholesky factorization.
pub fn spd_inverse_logdet(m: &SpdMatrix) -> Result<(SpdMatrix, f64), LinalgError> {
    let l = cholesky(m)?;
    let d = m.dim;
    let mut inv = vec![0.0; d * d];
    let mut col = vec![0.0; d];
    for j in 0..d {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        l.forward(&mut col);
        l.backward(&mut col);
        for i in 0..d {
            inv[i * d + j] = col[i];
        }
    }
    let inverse = SpdMatrix::new(d, inv)?;
    Ok((inverse, l.logdet()))
}

/// `v^T m v`.
pub fn quad_form(v: &[f64], m: &SpdMatrix) -> Result<f64, LinalgError> {
    m.check_dim(v.len())?;
    Ok(m.data
        .chunks(m.dim)
        .zip(v)
        .map(|(row, vi)| vi * dot(row, v))
        .sum())
}

/// `u^T m v`.
pub fn bilinear_form(u: &[f64], m: &SpdMatrix, v: &[f64]) -> Result<f64, LinalgError> {
    m.check_dim(u.len())?;
    m.check_dim(v.len())?;
    Ok(m.data
        .chunks(m.dim)
        .zip(u)
        .map(|(row, ui)| ui * dot(row, v))
        .sum())
}

/// `tr(a b)` for symmetric `a`, `b`.
pub fn trace_product(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64, LinalgError> {
    a.check_dim(b.dim)?;
    // tr(ab) = sum_ij a_ij b_ji
    let d = a.dim;
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += a.data[i * d + j] * b.data[j * d + i];
        }
    }
    Ok(s)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

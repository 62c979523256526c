//! Dense matrix utilities sized for small problems.
//!
//! Everything downstream — condition-number profiles, contraction-product
//! norms, block bound certificates — reduces to eigenvalue extremes of small
//! symmetric matrices (regressor dimension, at most a few hundred). A cyclic
//! Jacobi sweep is simple, backward stable, and accurate to high relative
//! precision at these sizes, which avoids pulling in a LAPACK-class
//! dependency for what is ultimately a handful of 2x2 rotations.
//!
//! Two storage types are provided:
//!
//! * [`Matrix`] — general rectangular, row-major `Vec<f64>`.
//! * [`SymmetricMatrix`] — square with symmetry *enforced at construction*
//!   (off-diagonal pairs are averaged), so the eigensolver never sees an
//!   asymmetric perturbation.

use crate::error::{Error, Result};

// ======================================================================
// General rectangular matrix
// ======================================================================

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries. Fails if the entry count does
    /// not match the shape or any entry is non-finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMatrix(format!(
                "zero-sized shape {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidMatrix(format!(
                "shape {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Entry accessor (row, column).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Entry mutator (row, column).
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row-major entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Matrix product `self * rhs`.
    pub fn mul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionError(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionError(format!(
                "matvec: {}x{} against vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += self.data[i * self.cols + j] * v[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// Transpose.
    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Entrywise difference `self - rhs`.
    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::DimensionError(format!(
                "cannot subtract {}x{} from {}x{}",
                rhs.rows, rhs.cols, self.rows, self.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Frobenius norm (root of the sum of squared entries).
    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// True if every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// ======================================================================
// Symmetric matrix
// ======================================================================

/// Dense symmetric matrix. Construction averages `(a_ij + a_ji) / 2` so the
/// stored data is exactly symmetric regardless of input roundoff.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    /// Builds from row-major entries of a square matrix, symmetrizing
    /// off-diagonal pairs by averaging.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMatrix("zero dimension".into()));
        }
        if entries.len() != dim * dim {
            return Err(Error::InvalidMatrix(format!(
                "dimension {dim} needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let mut data = entries;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let avg = 0.5 * (data[i * dim + j] + data[j * dim + i]);
                data[i * dim + j] = avg;
                data[j * dim + i] = avg;
            }
        }
        Ok(Self { dim, data })
    }

    /// All-zero symmetric matrix.
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// Identity.
    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Diagonal matrix from the given entries.
    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut m = Self::zeros(dim);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * dim + i] = v;
        }
        m
    }

    /// Rank-one matrix `v v^T`.
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

    /// Accumulates `weight * v v^T` in place. The workhorse for running
    /// regressor-information sums.
    pub fn add_outer(&mut self, v: &[f64], weight: f64) {
        debug_assert_eq!(v.len(), self.dim);
        for i in 0..self.dim {
            let wi = weight * v[i];
            if wi == 0.0 {
                continue;
            }
            for j in 0..self.dim {
                self.data[i * self.dim + j] += wi * v[j];
            }
        }
    }

    /// Dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry accessor.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Row-major entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Sum of diagonal entries.
    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// Entrywise sum.
    pub fn add(&self, rhs: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        if self.dim != rhs.dim {
            return Err(Error::DimensionError(format!(
                "cannot add {}x{0} and {}x{1}",
                self.dim, rhs.dim
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(SymmetricMatrix {
            dim: self.dim,
            data,
        })
    }

    /// Entrywise difference `self - rhs`.
    pub fn sub(&self, rhs: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        if self.dim != rhs.dim {
            return Err(Error::DimensionError(format!(
                "cannot subtract {}x{0} and {}x{1}",
                self.dim, rhs.dim
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(SymmetricMatrix {
            dim: self.dim,
            data,
        })
    }

    /// Entrywise scaling.
    pub fn scale(&self, c: f64) -> SymmetricMatrix {
        SymmetricMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// Quadratic form `x^T A x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionError(format!(
                "quadratic form: dim {} against vector of length {}",
                self.dim,
                x.len()
            )));
        }
        let mut acc = 0.0;
        for i in 0..self.dim {
            let mut row = 0.0;
            for j in 0..self.dim {
                row += self.data[i * self.dim + j] * x[j];
            }
            acc += x[i] * row;
        }
        Ok(acc)
    }

    /// Frobenius norm.
    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Copies into a general [`Matrix`].
    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: self.data.clone(),
        }
    }
}

// ======================================================================
// Eigenvalues: cyclic Jacobi
// ======================================================================

/// Full eigenvalue spectrum of a symmetric matrix, ascending.
///
/// Cyclic-by-row Jacobi: repeatedly annihilates each off-diagonal entry with
/// a Givens rotation until the off-diagonal mass is negligible relative to
/// the matrix scale. Quadratic convergence in practice; the sweep cap is a
/// safety net, not a tuning knob.
pub fn eigenvalues(m: &SymmetricMatrix) -> Result<Vec<f64>> {
    if !m.data.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidMatrix(
            "non-finite entry in eigensolve".into(),
        ));
    }
    let n = m.dim;
    if n == 1 {
        return Ok(vec![m.data[0]]);
    }
    let mut a = m.data.clone();
    let scale = m.frob_norm().max(1.0);
    let tol = 1e-15 * scale;
    const MAX_SWEEPS: usize = 64;

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if (2.0 * off).sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 0.1 * tol / (n as f64) {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Stable rotation: pick the smaller-angle root of
                // t^2 + 2 t theta - 1 = 0 with theta = (aqq - app) / (2 apq).
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let new_kp = akp - s * (akq + tau * akp);
                    let new_kq = akq + s * (akp - tau * akq);
                    a[k * n + p] = new_kp;
                    a[p * n + k] = new_kp;
                    a[k * n + q] = new_kq;
                    a[q * n + k] = new_kq;
                }
            }
        }
    }

    let mut eigs: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(eigs)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_extremes(m: &SymmetricMatrix) -> Result<(f64, f64)> {
    let eigs = eigenvalues(m)?;
    Ok((eigs[0], *eigs.last().expect("nonempty spectrum")))
}

/// Largest singular value of a general (not necessarily symmetric) matrix,
/// computed as the root of the largest eigenvalue of the Gram matrix on the
/// smaller side.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::InvalidMatrix(
            "non-finite entry in spectral norm".into(),
        ));
    }
    // Gram on the smaller side keeps the eigenproblem as small as possible.
    let g = if m.rows <= m.cols {
        m.mul(&m.transpose())?
    } else {
        m.transpose().mul(m)?
    };
    let dim = g.rows;
    let sym = SymmetricMatrix::new(dim, g.data)?;
    let (_, max) = eig_extremes(&sym)?;
    // Roundoff can push the Gram matrix's top eigenvalue a hair negative for
    // (near-)zero inputs; clamp before the root.
    Ok(max.max(0.0).sqrt())
}

/// Condition number `lambda_max / lambda_min` of a positive-definite
/// symmetric matrix.
///
/// Returns [`Error::SingularMatrix`] when the smallest eigenvalue is at or
/// below `1e-14 * lambda_max`, i.e. when the ratio would be dominated by
/// roundoff rather than by the matrix.
pub fn condition_number(m: &SymmetricMatrix) -> Result<f64> {
    let (min, max) = eig_extremes(m)?;
    if max <= 0.0 || min <= 1e-14 * max {
        return Err(Error::SingularMatrix(format!(
            "eigenvalue extremes ({min:e}, {max:e}) too close to singular"
        )));
    }
    Ok(max / min)
}

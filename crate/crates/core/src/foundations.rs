//! Matrix-calculus primitives: vec/vech, duplication and commutation
//! matrices, Kronecker products and positive-definiteness checks.
//!
//! `vec` is column-major throughout. `vech` stacks the lower triangle column
//! by column: `(a11, .., ak1, a22, .., akk)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance for the PDS check.
pub const PDS_RELATIVE_TOL: f64 = 1e-12;

/// A symmetric `k x k` matrix. Construction symmetrizes the input so that
/// `a[(i, j)] == a[(j, i)]` holds bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `m` as `(m + m^T) / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidArgument(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "matrix dimension must be >= 1".into(),
            ));
        }
        let k = m.nrows();
        let mut s = m;
        for j in 0..k {
            for i in (j + 1)..k {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        Ok(Self(s))
    }

    /// Accepts `m` only if it is already symmetric up to `tol` (absolute).
    pub fn try_exact(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidArgument("expected a square matrix".into()));
        }
        let k = m.nrows();
        for j in 0..k {
            for i in (j + 1)..k {
                if (m[(i, j)] - m[(j, i)]).abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Self::new(m)
    }

    pub fn identity(k: usize) -> Self {
        Self(DMatrix::identity(k, k))
    }

    pub fn from_row_slice(k: usize, data: &[f64]) -> Result<Self> {
        if data.len() != k * k {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries for a {k}x{k} matrix, got {}",
                k * k,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(k, k, data))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn vec(&self) -> DVector<f64> {
        vec(&self.0)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.0)
    }
}

/// A positive definite symmetric matrix with its eigendecomposition-derived
/// inverse, symmetric square root and log-determinant.
#[derive(Debug, Clone)]
pub struct PdsMatrix {
    base: SymMatrix,
    inverse: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    log_det: f64,
}

impl PdsMatrix {
    pub fn new(base: SymMatrix) -> Result<Self> {
        let eig = SymmetricEigen::new(base.0.clone());
        let max = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if !(min.is_finite() && min > 0.0 && min > PDS_RELATIVE_TOL * max) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
            });
        }
        let q = &eig.eigenvectors;
        let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
        let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        let inverse = SymMatrix::new(q * inv_diag * q.transpose())?.0;
        let sqrt = SymMatrix::new(q * sqrt_diag * q.transpose())?.0;
        let log_det = eig.eigenvalues.iter().map(|l| l.ln()).sum();
        Ok(Self {
            base,
            inverse,
            sqrt,
            log_det,
        })
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SymMatrix::new(m)?)
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn sym(&self) -> &SymMatrix {
        &self.base
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.base.0
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Symmetric square root `S^{1/2}`.
    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `|S|^p` evaluated through the log-determinant.
    pub fn det_pow(&self, p: f64) -> f64 {
        (p * self.log_det).exp()
    }

    /// Squared Mahalanobis distance `r^T S^{-1} r`.
    pub fn mahalanobis_sq(&self, r: &DVector<f64>) -> f64 {
        (r.transpose() * &self.inverse * r)[(0, 0)].max(0.0)
    }
}

/// Column-major stacking of all entries.
pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`] for a square matrix.
pub fn unvec(v: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
    if v.len() != k * k {
        return Err(Error::InvalidArgument(format!(
            "unvec: length {} is not {k}^2",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(k, k, v.as_slice()))
}

pub fn vech_len(k: usize) -> usize {
    k * (k + 1) / 2
}

pub fn vech(a: &SymMatrix) -> DVector<f64> {
    let k = a.dim();
    let mut out = Vec::with_capacity(vech_len(k));
    for j in 0..k {
        for i in j..k {
            out.push(a.0[(i, j)]);
        }
    }
    DVector::from_vec(out)
}

pub fn unvech(v: &DVector<f64>, k: usize) -> Result<SymMatrix> {
    if k == 0 || v.len() != vech_len(k) {
        return Err(Error::InvalidArgument(format!(
            "unvech: length {} does not match k(k+1)/2 for k = {k}",
            v.len()
        )));
    }
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for j in 0..k {
        for i in j..k {
            m[(i, j)] = v[idx];
            m[(j, i)] = v[idx];
            idx += 1;
        }
    }
    Ok(SymMatrix(m))
}

/// Index of entry `(i, j)` with `i >= j` inside `vech`.
fn vech_index(i: usize, j: usize, k: usize) -> usize {
    debug_assert!(i >= j);
    j * k - j * (j + 1) / 2 + i
}

/// The duplication matrix `D_k` with `D_k vech(A) = vec(A)`.
pub fn duplication_matrix(k: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(k * k, vech_len(k));
    for j in 0..k {
        for i in 0..k {
            let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
            d[(j * k + i, vech_index(hi, lo, k))] = 1.0;
        }
    }
    d
}

/// The commutation matrix `K_{k,k}` with `K vec(A) = vec(A^T)`.
pub fn commutation_matrix(k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k * k, k * k);
    for i in 0..k {
        for j in 0..k {
            // vec(A^T)[j*k + i] = A^T[(i, j)] = A[(j, i)] = vec(A)[i*k + j]
            m[(j * k + i, i * k + j)] = 1.0;
        }
    }
    m
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `(m + m^T) / 2` for a square matrix.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `||a - b||_F / ||b||_F`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument("ragged matrix rows".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

/// Smallest eigenvalue of a symmetric matrix (after symmetrization).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

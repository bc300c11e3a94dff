//! Linear covariance structures `V(theta) = theta_1 L_1 + .. + theta_l L_l`,
//! the stacked `k^2 x l` design `L`, and the projection onto its column space
//! in the `Sigma^{-1} (x) Sigma^{-1}` metric.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foundations::{self, PdsMatrix, SymMatrix};

/// Full column rank threshold on `sigma_min / sigma_max` of `L`.
pub const RANK_TOL: f64 = 1e-10;
/// Largest accepted condition number of `L^T (S^-1 (x) S^-1) L`.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// JSON descriptor of a structure.
///
/// ```json
/// {"kind": "compound-symmetry", "dim": 3}
/// {"kind": "variance-components", "dim": 4, "z": [[[1, 0], [1, 0], [0, 1], [0, 1]]]}
/// {"kind": "custom", "dim": 2, "basis": [[[1, 0], [0, 1]], [[0, 1], [1, 0]]]}
/// ```
///
/// Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StructureSpec {
    Unstructured {
        dim: usize,
    },
    CompoundSymmetry {
        dim: usize,
    },
    Diagonal {
        dim: usize,
    },
    VarianceComponents {
        dim: usize,
        z: Vec<Vec<Vec<f64>>>,
    },
    Custom {
        dim: usize,
        basis: Vec<Vec<Vec<f64>>>,
    },
}

impl StructureSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Unstructured { dim }
            | Self::CompoundSymmetry { dim }
            | Self::Diagonal { dim }
            | Self::VarianceComponents { dim, .. }
            | Self::Custom { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearStructure {
    name: String,
    dim: usize,
    basis: Vec<SymMatrix>,
    stacked: DMatrix<f64>,
    /// `(L^T L)^{-1} L^T`
    left_inverse: DMatrix<f64>,
}

/// Vector of variance components.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector(pub DVector<f64>);

impl ThetaVector {
    pub fn new(values: &[f64]) -> Self {
        Self(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

impl From<DVector<f64>> for ThetaVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

impl LinearStructure {
    /// Validates a list of basis matrices. Asymmetric matrices, rank
    /// deficiency and `l > k(k+1)/2` are rejected.
    pub fn from_basis(name: impl Into<String>, basis: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = basis.first().ok_or_else(|| {
            Error::InvalidSpec("structure needs at least one basis matrix".into())
        })?;
        let k = first.nrows();
        if k == 0 {
            return Err(Error::InvalidSpec("dimension must be >= 1".into()));
        }
        let ell = basis.len();
        if ell > foundations::vech_len(k) {
            return Err(Error::InvalidSpec(format!(
                "{ell} basis matrices exceed k(k+1)/2 = {}",
                foundations::vech_len(k)
            )));
        }
        let mut sym = Vec::with_capacity(ell);
        for (j, m) in basis.into_iter().enumerate() {
            if m.nrows() != k || m.ncols() != k {
                return Err(Error::InvalidSpec(format!(
                    "basis matrix {j} is {}x{}, expected {k}x{k}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            let scale = foundations::max_abs(&m).max(1.0);
            let s = SymMatrix::try_exact(m, 1e-12 * scale)
                .map_err(|_| Error::InvalidSpec(format!("basis matrix {j} is not symmetric")))?;
            sym.push(s);
        }
        let mut stacked = DMatrix::zeros(k * k, ell);
        for (j, b) in sym.iter().enumerate() {
            stacked.set_column(j, &b.vec());
        }
        let sv = stacked.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smax > 0.0) || smin <= RANK_TOL * smax {
            let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
            return Err(Error::InvalidSpec(format!(
                "basis is rank deficient ({})",
                Error::StructuralRank { ratio }
            )));
        }
        let ltl = stacked.transpose() * &stacked;
        let left_inverse = ltl
            .cholesky()
            .ok_or(Error::StructuralRank { ratio: smin / smax })?
            .solve(&stacked.transpose());
        Ok(Self {
            name: name.into(),
            dim: k,
            basis: sym,
            stacked,
            left_inverse,
        })
    }

    pub fn from_spec(spec: &StructureSpec) -> Result<Self> {
        match spec {
            StructureSpec::Unstructured { dim } => Self::unstructured(*dim),
            StructureSpec::CompoundSymmetry { dim } => Self::compound_symmetry(*dim),
            StructureSpec::Diagonal { dim } => Self::diagonal(*dim),
            StructureSpec::VarianceComponents { dim, z } => {
                let zs = z
                    .iter()
                    .map(|rows| foundations::matrix_from_rows(rows))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::InvalidSpec(e.to_string()))?;
                Self::variance_components(*dim, &zs)
            }
            StructureSpec::Custom { dim, basis } => {
                let mats = basis
                    .iter()
                    .map(|rows| foundations::matrix_from_rows(rows))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::InvalidSpec(e.to_string()))?;
                if mats.iter().any(|m| m.nrows() != *dim || m.ncols() != *dim) {
                    return Err(Error::InvalidSpec(format!(
                        "custom basis matrices must be {dim}x{dim}"
                    )));
                }
                Self::from_basis("custom", mats)
            }
        }
    }

    /// `theta = vech(Sigma)`, `L = D_k`.
    pub fn unstructured(k: usize) -> Result<Self> {
        check_dim(k)?;
        let d = foundations::duplication_matrix(k);
        let basis = (0..d.ncols())
            .map(|j| DMatrix::from_column_slice(k, k, d.column(j).as_slice()))
            .collect();
        Self::from_basis("unstructured", basis)
    }

    /// Basis `(I_k, J_k - I_k)`.
    pub fn compound_symmetry(k: usize) -> Result<Self> {
        check_dim(k)?;
        let ident = DMatrix::identity(k, k);
        let off = DMatrix::from_element(k, k, 1.0) - &ident;
        if k == 1 {
            return Err(Error::InvalidSpec(
                "compound symmetry needs k >= 2 (J_1 - I_1 = 0)".into(),
            ));
        }
        Self::from_basis("compound-symmetry", vec![ident, off])
    }

    /// Basis `(e_1 e_1^T, .., e_k e_k^T)`.
    pub fn diagonal(k: usize) -> Result<Self> {
        check_dim(k)?;
        let basis = (0..k)
            .map(|i| {
                let mut m = DMatrix::zeros(k, k);
                m[(i, i)] = 1.0;
                m
            })
            .collect();
        Self::from_basis("diagonal", basis)
    }

    /// Basis `(Z_1 Z_1^T, .., Z_m Z_m^T, I_k)` of a mixed-effects model.
    pub fn variance_components(k: usize, z: &[DMatrix<f64>]) -> Result<Self> {
        check_dim(k)?;
        let mut basis = Vec::with_capacity(z.len() + 1);
        for (j, zj) in z.iter().enumerate() {
            if zj.nrows() != k {
                return Err(Error::InvalidSpec(format!(
                    "Z_{} has {} rows, expected {k}",
                    j + 1,
                    zj.nrows()
                )));
            }
            basis.push(zj * zj.transpose());
        }
        basis.push(DMatrix::identity(k, k));
        Self::from_basis("variance-components", basis)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nparams(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[SymMatrix] {
        &self.basis
    }

    /// The `k^2 x l` matrix with columns `vec(L_j)`.
    pub fn stacked(&self) -> &DMatrix<f64> {
        &self.stacked
    }

    fn check_theta(&self, theta: &ThetaVector) -> Result<()> {
        if theta.len() != self.nparams() {
            return Err(Error::InvalidArgument(format!(
                "theta has length {}, structure has {} parameters",
                theta.len(),
                self.nparams()
            )));
        }
        Ok(())
    }

    /// `sum_j theta_j L_j`.
    pub fn evaluate(&self, theta: &ThetaVector) -> Result<SymMatrix> {
        self.check_theta(theta)?;
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (t, b) in theta.0.iter().zip(&self.basis) {
            m += b.matrix() * *t;
        }
        SymMatrix::new(m)
    }

    /// `V(theta)` as a checked PDS matrix.
    pub fn evaluate_pds(&self, theta: &ThetaVector) -> Result<PdsMatrix> {
        PdsMatrix::new(self.evaluate(theta)?)
    }

    /// Whether `V(theta)` is positive definite.
    pub fn is_valid(&self, theta: &ThetaVector) -> bool {
        self.evaluate_pds(theta).is_ok()
    }

    /// `(L^T L)^{-1} L^T vec(V)`.
    pub fn coordinates(&self, v: &SymMatrix) -> Result<ThetaVector> {
        if v.dim() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "matrix is {}x{}, structure is {}x{}",
                v.dim(),
                v.dim(),
                self.dim,
                self.dim
            )));
        }
        Ok(ThetaVector(&self.left_inverse * v.vec()))
    }

    /// `(L^T L)^{-1} L^T x` for an arbitrary `k^2` vector.
    pub fn coordinates_of_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim * self.dim {
            return Err(Error::InvalidArgument("vector length must be k^2".into()));
        }
        Ok(&self.left_inverse * x)
    }

    pub fn weighted(&self, sigma: &PdsMatrix) -> Result<WeightedProjection> {
        WeightedProjection::new(self, sigma)
    }

    /// The `k^2 x k^2` matrix
    /// `L (L^T (S^-1 (x) S^-1) L)^{-1} L^T (S^-1 (x) S^-1)`.
    pub fn projector(&self, sigma: &PdsMatrix) -> Result<DMatrix<f64>> {
        Ok(self.weighted(sigma)?.projector())
    }
}

fn check_dim(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidSpec("dimension must be >= 1".into()));
    }
    Ok(())
}

/// The structure paired with a PDS `Sigma`: the weighted Gram matrix
/// `G = L^T (S^-1 (x) S^-1) L` and its inverse. Products with
/// `S^-1 (x) S^-1` use `vec(S^-1 X S^-1)` rather than forming the Kronecker
/// product.
#[derive(Debug, Clone)]
pub struct WeightedProjection {
    stacked: DMatrix<f64>,
    sigma: PdsMatrix,
    /// columns `vec(S^-1 L_j S^-1)`, i.e. `(S^-1 (x) S^-1) L`
    weighted_basis: DMatrix<f64>,
    gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
}

impl WeightedProjection {
    pub fn new(structure: &LinearStructure, sigma: &PdsMatrix) -> Result<Self> {
        let k = structure.dim();
        if sigma.dim() != k {
            return Err(Error::InvalidArgument(format!(
                "Sigma is {}x{}, structure is {k}x{k}",
                sigma.dim(),
                sigma.dim()
            )));
        }
        let si = sigma.inverse();
        let ell = structure.nparams();
        let mut weighted_basis = DMatrix::zeros(k * k, ell);
        for (j, b) in structure.basis().iter().enumerate() {
            let w = si * b.matrix() * si;
            weighted_basis.set_column(j, &foundations::vec(&w));
        }
        let gram = foundations::symmetrize(&(structure.stacked().transpose() * &weighted_basis));
        let eig = SymmetricEigen::new(gram.clone());
        let emax = eig.eigenvalues.max();
        let emin = eig.eigenvalues.min();
        let condition = if emin > 0.0 {
            emax / emin
        } else {
            f64::INFINITY
        };
        if !(condition <= MAX_GRAM_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
        let gram_inv = gram
            .clone()
            .cholesky()
            .ok_or(Error::IllConditioned { condition })?
            .inverse();
        Ok(Self {
            stacked: structure.stacked().clone(),
            sigma: sigma.clone(),
            weighted_basis,
            gram: gram.clone(),
            gram_inv: foundations::symmetrize(&gram_inv),
        })
    }

    pub fn sigma(&self) -> &PdsMatrix {
        &self.sigma
    }

    /// `L^T (S^-1 (x) S^-1) L`
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `(L^T (S^-1 (x) S^-1) L)^{-1}`
    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    /// `L^T (S^-1 (x) S^-1) x`
    pub fn weighted_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        self.weighted_basis.transpose() * x
    }

    /// Coordinates of the weighted projection of `x`: `G^{-1} L^T W x`.
    pub fn project_coordinates(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.gram_inv * self.weighted_transpose(x)
    }

    /// `Pi_L x`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.stacked * self.project_coordinates(x)
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.stacked * &self.gram_inv * self.weighted_basis.transpose()
    }

    /// `L G^{-1} L^T`, the core of the limiting covariance of `vec(V_n)`.
    pub fn sandwich(&self) -> DMatrix<f64> {
        foundations::symmetrize(&(&self.stacked * &self.gram_inv * self.stacked.transpose()))
    }
}

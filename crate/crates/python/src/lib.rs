//! Python bindings. Matrices cross the boundary as lists of rows.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use structcov::asymptotics::{self, LimitCovariances};
use structcov::estimators::{self, Dataset, FitOptions};
use structcov::foundations::{matrix_from_rows, matrix_rows, SymMatrix};
use structcov::influence::{self, HomogeneousTarget};
use structcov::spherical::SphericalLaw;
use structcov::weights::{Biweight, RhoFunction};
use structcov::{
    Error, Family, InfluenceWeights, LinearStructure, StructureSpec, ThetaVector, WeightTriple,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_)
        | Error::InvalidSpec(_)
        | Error::InvalidParameters(_)
        | Error::Data { .. }
        | Error::MissingConstant
        | Error::StructuralRank { .. }
        | Error::NotPositiveDefinite { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    matrix_from_rows(rows).map_err(to_py)
}

fn parse_family(name: &str) -> PyResult<Family> {
    let f: Family = name.parse().map_err(to_py)?;
    if f == Family::MEstimator {
        return Err(PyValueError::new_err(
            "m-estimator weights are not available from Python",
        ));
    }
    Ok(f)
}

fn resolve_cutoff(k: usize, cutoff: Option<f64>, breakdown: Option<f64>) -> PyResult<f64> {
    match (cutoff, breakdown) {
        (Some(c), None) => Ok(c),
        (None, Some(e)) => asymptotics::cutoff_for_breakdown(k, e).map_err(to_py),
        _ => Err(PyValueError::new_err(
            "give exactly one of cutoff or breakdown",
        )),
    }
}

/// Biweight cutoff `c` with asymptotic breakdown point `eps` in dimension `k`.
#[pyfunction]
fn cutoff_for_breakdown(k: usize, eps: f64) -> PyResult<f64> {
    asymptotics::cutoff_for_breakdown(k, eps).map_err(to_py)
}

#[pyfunction]
fn breakdown_for_cutoff(k: usize, c: f64) -> PyResult<f64> {
    asymptotics::breakdown_for_cutoff(k, c).map_err(to_py)
}

#[pyclass(name = "AsymptoticScalars", frozen, get_all)]
struct PyScalars {
    family: String,
    k: usize,
    cutoff: Option<f64>,
    sigma1: f64,
    sigma2: f64,
    sigma3: f64,
    lambda_: f64,
    alpha: f64,
    b0: f64,
    are_regression: f64,
    are_shape_direction: f64,
    are_scale: f64,
}

#[pymethods]
impl PyScalars {
    fn __repr__(&self) -> String {
        format!(
            "AsymptoticScalars(family='{}', k={}, sigma1={:.6}, sigma2={:.6}, sigma3={:.6})",
            self.family, self.k, self.sigma1, self.sigma2, self.sigma3
        )
    }
}

impl From<asymptotics::AsymptoticScalars> for PyScalars {
    fn from(s: asymptotics::AsymptoticScalars) -> Self {
        PyScalars {
            family: s.family.to_string(),
            k: s.k,
            cutoff: s.cutoff,
            sigma1: s.sigma1,
            sigma2: s.sigma2,
            sigma3: s.sigma3,
            lambda_: s.lambda,
            alpha: s.alpha,
            b0: s.b0,
            are_regression: s.are_regression(),
            are_shape_direction: s.are_shape_direction(),
            are_scale: s.are_scale(),
        }
    }
}

/// Limiting-variance scalars under the standard Gaussian.
#[pyfunction]
#[pyo3(signature = (k, family = "s-rho", cutoff = None, breakdown = None))]
fn scalars(
    k: usize,
    family: &str,
    cutoff: Option<f64>,
    breakdown: Option<f64>,
) -> PyResult<PyScalars> {
    let s = match parse_family(family)? {
        Family::GaussianMl => asymptotics::AsymptoticScalars::gaussian_ml(k),
        _ => asymptotics::biweight_scalars(k, resolve_cutoff(k, cutoff, breakdown)?),
    };
    s.map(Into::into).map_err(to_py)
}

/// `(G1, G2, G3)` for the biweight S-estimator.
#[pyfunction]
fn ges_indices(k: usize, c: f64) -> PyResult<(f64, f64, f64)> {
    let g = influence::ges_indices(k, c).map_err(to_py)?;
    Ok((g.g1, g.g2, g.g3))
}

#[pyclass(name = "TradeoffRow", frozen, get_all)]
struct PyTradeoffRow {
    k: usize,
    breakdown: f64,
    c: f64,
    are_regression: f64,
    are_shape_direction: f64,
    are_scale: f64,
    g1: f64,
    g2: f64,
    g3: f64,
}

#[pyfunction]
fn tradeoff(dims: Vec<usize>, grid: Vec<f64>) -> PyResult<Vec<PyTradeoffRow>> {
    let rows = influence::tradeoff_curve(&dims, &grid).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| PyTradeoffRow {
            k: r.k,
            breakdown: r.breakdown,
            c: r.c,
            are_regression: r.are_regression,
            are_shape_direction: r.are_shape_direction,
            are_scale: r.are_scale,
            g1: r.g1,
            g2: r.g2,
            g3: r.g3,
        })
        .collect())
}

#[pyclass(name = "LimitCovariances", frozen, get_all)]
struct PyLimit {
    cov_theta: Vec<Vec<f64>>,
    cov_vec_v: Vec<Vec<f64>>,
    cov_shape: Vec<Vec<f64>>,
    cov_direction: Vec<Vec<f64>>,
    cov_direction_det: Vec<Vec<f64>>,
    var_scale: f64,
}

impl From<LimitCovariances> for PyLimit {
    fn from(l: LimitCovariances) -> Self {
        PyLimit {
            cov_theta: matrix_rows(&l.cov_theta),
            cov_vec_v: matrix_rows(&l.cov_vec_v),
            cov_shape: matrix_rows(&l.cov_shape),
            cov_direction: matrix_rows(&l.cov_direction),
            cov_direction_det: matrix_rows(&l.cov_direction_det),
            var_scale: l.var_scale,
        }
    }
}

/// Linear covariance structure `V(theta) = sum theta_j L_j`.
#[pyclass(name = "Structure", frozen)]
struct PyStructure(LinearStructure);

#[pymethods]
impl PyStructure {
    #[staticmethod]
    fn unstructured(k: usize) -> PyResult<Self> {
        LinearStructure::unstructured(k).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn compound_symmetry(k: usize) -> PyResult<Self> {
        LinearStructure::compound_symmetry(k)
            .map(Self)
            .map_err(to_py)
    }

    #[staticmethod]
    fn diagonal(k: usize) -> PyResult<Self> {
        LinearStructure::diagonal(k).map(Self).map_err(to_py)
    }

    /// From a JSON descriptor such as `{"kind": "compound-symmetry", "dim": 3}`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec = StructureSpec::from_json(text).map_err(to_py)?;
        LinearStructure::from_spec(&spec).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_basis(name: &str, basis: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let mats = basis
            .iter()
            .map(|b| rows_to_matrix(b))
            .collect::<PyResult<Vec<_>>>()?;
        LinearStructure::from_basis(name, mats)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name().to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn nparams(&self) -> usize {
        self.0.nparams()
    }

    fn evaluate(&self, theta: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let v = self.0.evaluate(&ThetaVector::new(&theta)).map_err(to_py)?;
        Ok(v.rows())
    }

    fn is_valid(&self, theta: Vec<f64>) -> bool {
        self.0.is_valid(&ThetaVector::new(&theta))
    }

    fn coordinates(&self, matrix: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let s = SymMatrix::new(rows_to_matrix(&matrix)?).map_err(to_py)?;
        Ok(self.0.coordinates(&s).map_err(to_py)?.as_slice().to_vec())
    }

    fn projector(&self, sigma: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let s = structcov::PdsMatrix::from_matrix(rows_to_matrix(&sigma)?).map_err(to_py)?;
        Ok(matrix_rows(&self.0.projector(&s).map_err(to_py)?))
    }

    fn limit_covariances(&self, theta: Vec<f64>, sigma1: f64, sigma2: f64) -> PyResult<PyLimit> {
        asymptotics::limit_covariances(&self.0, &ThetaVector::new(&theta), sigma1, sigma2)
            .map(Into::into)
            .map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Structure('{}', dim={}, nparams={})",
            self.0.name(),
            self.0.dim(),
            self.0.nparams()
        )
    }
}

#[pyclass(name = "FitResult", frozen, get_all)]
struct PyFit {
    beta: Vec<f64>,
    theta: Vec<f64>,
    distances: Vec<f64>,
    iterations: usize,
    converged: bool,
    pds_valid: bool,
    psi_norm: f64,
    local_solution: bool,
    theta_std_errors: Vec<f64>,
}

fn triple_for(
    k: usize,
    family: Family,
    cutoff: Option<f64>,
    breakdown: Option<f64>,
) -> PyResult<WeightTriple> {
    match family {
        Family::GaussianMl => Ok(WeightTriple::gaussian_ml(k)),
        _ => asymptotics::biweight_triple(k, resolve_cutoff(k, cutoff, breakdown)?).map_err(to_py),
    }
}

/// Fits the structured model. `xs` holds one `k x q` design per
/// observation; omit it for the location model.
#[pyfunction]
#[pyo3(signature = (ys, structure, xs = None, family = "gaussian-ml", cutoff = None, breakdown = None, max_iter = 500, tol = 1e-9))]
#[allow(clippy::too_many_arguments)]
fn fit(
    ys: Vec<Vec<f64>>,
    structure: &PyStructure,
    xs: Option<Vec<Vec<Vec<f64>>>>,
    family: &str,
    cutoff: Option<f64>,
    breakdown: Option<f64>,
    max_iter: usize,
    tol: f64,
) -> PyResult<PyFit> {
    let ys: Vec<DVector<f64>> = ys.iter().map(|y| DVector::from_column_slice(y)).collect();
    let data = match xs {
        Some(xs) => {
            let xs = xs
                .iter()
                .map(|x| rows_to_matrix(x))
                .collect::<PyResult<Vec<_>>>()?;
            Dataset::new(ys, xs)
        }
        None => Dataset::location(ys),
    }
    .map_err(to_py)?;
    let k = data.dim();
    let triple = triple_for(k, parse_family(family)?, cutoff, breakdown)?;
    let opts = FitOptions {
        max_iter,
        tol,
        ..FitOptions::default()
    };
    let res = estimators::fit(&data, &structure.0, &triple, &opts).map_err(to_py)?;
    let theta_std_errors = if res.pds_valid {
        let law = SphericalLaw::gaussian(k).map_err(to_py)?;
        let (s1, s2) = asymptotics::sigma12(&triple, &law).map_err(to_py)?;
        let lc = asymptotics::limit_covariances(&structure.0, &res.theta_vector(), s1, s2)
            .map_err(to_py)?;
        let n = data.len() as f64;
        lc.cov_theta
            .diagonal()
            .iter()
            .map(|v| (v / n).sqrt())
            .collect()
    } else {
        vec![f64::NAN; res.theta.len()]
    };
    Ok(PyFit {
        beta: res.beta,
        theta: res.theta,
        distances: res.distances,
        iterations: res.iterations,
        converged: res.converged,
        pds_valid: res.pds_valid,
        psi_norm: res.psi_norm,
        local_solution: res.local_solution,
        theta_std_errors,
    })
}

/// Influence functions at `y`. Returns `(if_theta, if_vec_m, shape, scale)`.
#[pyfunction]
#[pyo3(signature = (y, structure, theta, mu = None, family = "gaussian-ml", cutoff = None, breakdown = None))]
#[allow(clippy::type_complexity)]
fn influence_function(
    y: Vec<f64>,
    structure: &PyStructure,
    theta: Vec<f64>,
    mu: Option<Vec<f64>>,
    family: &str,
    cutoff: Option<f64>,
    breakdown: Option<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    let k = structure.0.dim();
    let w = match parse_family(family)? {
        Family::GaussianMl => InfluenceWeights::gaussian_ml(k),
        _ => {
            let c = resolve_cutoff(k, cutoff, breakdown)?;
            let law = SphericalLaw::gaussian(k).map_err(to_py)?;
            let rho: Arc<dyn RhoFunction> = Arc::new(Biweight::new(c).map_err(to_py)?);
            let b0 = asymptotics::consistency_constant(rho.as_ref(), &law).map_err(to_py)?;
            InfluenceWeights::s_rho(rho, &law, b0).map_err(to_py)?
        }
    };
    let y = DVector::from_column_slice(&y);
    let mu = mu
        .map(|m| DVector::from_column_slice(&m))
        .unwrap_or_else(|| DVector::zeros(k));
    let theta = ThetaVector::new(&theta);
    let base = influence::if_structured(&y, &mu, &structure.0, &theta, &w).map_err(to_py)?;
    let shape =
        influence::if_homogeneous(&y, &mu, &structure.0, &theta, &w, HomogeneousTarget::Shape)
            .map_err(to_py)?;
    let scale =
        influence::if_homogeneous(&y, &mu, &structure.0, &theta, &w, HomogeneousTarget::Scale)
            .map_err(to_py)?;
    Ok((
        base.if_theta.as_slice().to_vec(),
        base.if_vec_m.as_slice().to_vec(),
        shape.as_slice().to_vec(),
        scale[0],
    ))
}

#[pymodule]
fn structcov_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScalars>()?;
    m.add_class::<PyTradeoffRow>()?;
    m.add_class::<PyLimit>()?;
    m.add_class::<PyStructure>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(cutoff_for_breakdown, m)?)?;
    m.add_function(wrap_pyfunction!(breakdown_for_cutoff, m)?)?;
    m.add_function(wrap_pyfunction!(scalars, m)?)?;
    m.add_function(wrap_pyfunction!(ges_indices, m)?)?;
    m.add_function(wrap_pyfunction!(tradeoff, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(influence_function, m)?)?;
    Ok(())
}

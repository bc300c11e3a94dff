//! Data sets for the model `y_i = X_i beta + u_i` and an iteratively
//! reweighted solver for the estimating equations in `(beta, theta)`.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foundations::{min_eigenvalue, vec, PdsMatrix, SymMatrix};
use crate::structure::{LinearStructure, ThetaVector};
use crate::weights::{Family, WeightTriple};

/// Observations `(y_i, X_i)` with `y_i` in `R^k` and `X_i` of shape `k x q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ys: Vec<DVector<f64>>,
    xs: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct JsonObservation {
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    observations: Vec<JsonObservation>,
}

fn data_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

impl Dataset {
    pub fn new(ys: Vec<DVector<f64>>, xs: Vec<DMatrix<f64>>) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if ys.len() != xs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} responses but {} design matrices",
                ys.len(),
                xs.len()
            )));
        }
        let k = ys[0].len();
        let q = xs[0].ncols();
        if k == 0 || q == 0 {
            return Err(Error::InvalidArgument("need k >= 1 and q >= 1".into()));
        }
        for (i, (y, x)) in ys.iter().zip(&xs).enumerate() {
            if y.len() != k || x.nrows() != k || x.ncols() != q {
                return Err(Error::InvalidArgument(format!(
                    "observation {i}: expected y of length {k} and X of shape {k}x{q}"
                )));
            }
            if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "observation {i} has non-finite entries"
                )));
            }
        }
        let xtx = xs
            .iter()
            .fold(DMatrix::zeros(q, q), |acc, x| acc + x.transpose() * x);
        let max = xtx.abs().max();
        if !(min_eigenvalue(&xtx) > 1e-12 * max.max(1e-300)) {
            return Err(Error::InvalidArgument(
                "stacked design does not have full column rank".into(),
            ));
        }
        Ok(Self { ys, xs })
    }

    /// All `X_i = I_k`: the multivariate location model.
    pub fn location(ys: Vec<DVector<f64>>) -> Result<Self> {
        let k = ys.first().map(|y| y.len()).unwrap_or(0);
        let xs = vec![DMatrix::identity(k, k); ys.len()];
        Self::new(ys, xs)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.ys[0].len()
    }

    pub fn ncovariates(&self) -> usize {
        self.xs[0].ncols()
    }

    pub fn responses(&self) -> &[DVector<f64>] {
        &self.ys
    }

    pub fn designs(&self) -> &[DMatrix<f64>] {
        &self.xs
    }

    pub fn residuals(&self, beta: &DVector<f64>) -> Vec<DVector<f64>> {
        self.ys
            .iter()
            .zip(&self.xs)
            .map(|(y, x)| y - x * beta)
            .collect()
    }

    /// Reads the CSV layout `y_1..y_k, x_1_1..x_k_q` (design row-major).
    /// Without `x_` columns every design is `I_k`.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let file = std::fs::File::open(p)?;
        Self::from_csv_reader(file, &p.display().to_string())
    }

    pub fn from_csv_reader<R: Read>(reader: R, name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| data_err(name, 1, e.to_string()))?
            .clone();
        let (k, q) = parse_header(&headers).map_err(|m| data_err(name, 1, m))?;
        let location = q == 0;
        let width = k + k * q;
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                data_err(name, line, e.to_string())
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != width {
                return Err(data_err(
                    name,
                    line,
                    format!("expected {width} fields, found {}", rec.len()),
                ));
            }
            let mut vals = Vec::with_capacity(width);
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    data_err(
                        name,
                        line,
                        format!("column {}: '{field}' is not a number", j + 1),
                    )
                })?;
                if !v.is_finite() {
                    return Err(data_err(
                        name,
                        line,
                        format!("column {}: non-finite value", j + 1),
                    ));
                }
                vals.push(v);
            }
            ys.push(DVector::from_column_slice(&vals[..k]));
            xs.push(if location {
                DMatrix::identity(k, k)
            } else {
                DMatrix::from_row_slice(k, q, &vals[k..])
            });
        }
        if ys.is_empty() {
            return Err(data_err(name, 1, "no observations"));
        }
        Self::new(ys, xs).map_err(|e| data_err(name, 0, e.to_string()))
    }

    pub fn to_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = csv::Writer::from_writer(file);
        let (k, q) = (self.dim(), self.ncovariates());
        let mut header: Vec<String> = (1..=k).map(|i| format!("y_{i}")).collect();
        for i in 1..=k {
            for j in 1..=q {
                header.push(format!("x_{i}_{j}"));
            }
        }
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&header).map_err(io)?;
        for (y, x) in self.ys.iter().zip(&self.xs) {
            let mut row: Vec<String> = y.iter().map(|v| v.to_string()).collect();
            for i in 0..k {
                for j in 0..q {
                    row.push(x[(i, j)].to_string());
                }
            }
            w.write_record(&row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `{"observations": [{"y": [..], "x": [[..], ..]}, ..]}`.
    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p)?;
        Self::from_json_str(&text, &p.display().to_string())
    }

    pub fn from_json_str(text: &str, name: &str) -> Result<Self> {
        let parsed: JsonDataset =
            serde_json::from_str(text).map_err(|e| data_err(name, e.line(), e.to_string()))?;
        let mut ys = Vec::new();
        let mut xs = Vec::new();
        for (i, obs) in parsed.observations.iter().enumerate() {
            let k = obs.y.len();
            let q = obs.x.first().map(|r| r.len()).unwrap_or(0);
            if obs.x.len() != k || obs.x.iter().any(|r| r.len() != q) {
                return Err(data_err(
                    name,
                    0,
                    format!("observation {i}: x must be {k} rows of equal length"),
                ));
            }
            ys.push(DVector::from_column_slice(&obs.y));
            let flat: Vec<f64> = obs.x.iter().flatten().cloned().collect();
            xs.push(DMatrix::from_row_slice(k, q, &flat));
        }
        Self::new(ys, xs).map_err(|e| data_err(name, 0, e.to_string()))
    }

    pub fn to_json_string(&self) -> Result<String> {
        let observations = self
            .ys
            .iter()
            .zip(&self.xs)
            .map(|(y, x)| JsonObservation {
                y: y.iter().cloned().collect(),
                x: crate::foundations::matrix_rows(x),
            })
            .collect();
        Ok(serde_json::to_string_pretty(&JsonDataset { observations })?)
    }

    /// Dispatches on the file extension (`.json` or CSV otherwise).
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        match p.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_path(p),
            _ => Self::from_csv_path(p),
        }
    }
}

fn parse_header(headers: &csv::StringRecord) -> std::result::Result<(usize, usize), String> {
    let names: Vec<&str> = headers.iter().collect();
    let k = names.iter().take_while(|n| n.starts_with("y_")).count();
    if k == 0 {
        return Err("header must start with y_1".into());
    }
    for (i, n) in names[..k].iter().enumerate() {
        if *n != format!("y_{}", i + 1) {
            return Err(format!("expected column y_{}, found '{n}'", i + 1));
        }
    }
    let rest = names.len() - k;
    if !rest.is_multiple_of(k) {
        return Err(format!(
            "expected k*q design columns after {k} responses, found {rest}"
        ));
    }
    let q = rest / k;
    for i in 0..k {
        for j in 0..q {
            let want = format!("x_{}_{}", i + 1, j + 1);
            let got = names[k + i * q + j];
            if got != want {
                return Err(format!("expected column {want}, found '{got}'"));
            }
        }
    }
    Ok((k, q))
}

/// Empirical averages of `Psi_beta` and `Psi_theta`:
///
/// ```text
/// Psi_beta  = w1(d) X' V^-1 (y - X beta)
/// Psi_theta = L'(V^-1 x V^-1) vec{ w2(d) r r' - w3(d) V }
/// ```
pub fn psi_residual(
    data: &Dataset,
    structure: &LinearStructure,
    triple: &WeightTriple,
    beta: &DVector<f64>,
    theta: &ThetaVector,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let v = structure
        .evaluate_pds(theta)
        .map_err(|e| Error::InvalidState(format!("V(theta) is not PDS: {e}")))?;
    let proj = structure.weighted(&v)?;
    let n = data.len() as f64;
    let q = data.ncovariates();
    let mut psi_b = DVector::zeros(q);
    let mut scatter = DMatrix::zeros(data.dim(), data.dim());
    let mut w3_sum = 0.0;
    for (r, x) in data.residuals(beta).iter().zip(data.designs()) {
        let d = v.mahalanobis_sq(r).max(0.0).sqrt();
        psi_b += x.transpose() * (v.inverse() * r) * triple.w1(d);
        scatter += r * r.transpose() * triple.w2(d);
        w3_sum += triple.w3(d);
    }
    let inner = scatter / n - v.matrix() * (w3_sum / n);
    Ok((psi_b / n, proj.weighted_transpose(&vec(&inner))))
}

/// Starting point of the iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// OLS for `beta`, coordinates of the residual scatter for `theta`.
    #[default]
    Ols,
    Given {
        beta: Vec<f64>,
        theta: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Tolerance on the relative parameter change.
    pub tol: f64,
    pub init: InitMode,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-9,
            init: InitMode::Ols,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub distances: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub pds_valid: bool,
    /// Largest relative parameter change in the last iteration.
    pub last_change: f64,
    /// `||(psi_beta, psi_theta)||` at exit.
    pub psi_norm: f64,
    /// The iteration targets a root of the estimating equations; for
    /// S-estimators this need not be the global minimizer.
    pub local_solution: bool,
}

impl FitResult {
    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    pub fn theta_vector(&self) -> ThetaVector {
        ThetaVector::new(&self.theta)
    }
}

const MAX_HALVINGS: usize = 30;

/// `(X'X)^-1 X'y` on the stacked system.
pub fn ols_beta(data: &Dataset) -> Result<DVector<f64>> {
    let q = data.ncovariates();
    let mut xtx = DMatrix::zeros(q, q);
    let mut xty = DVector::zeros(q);
    for (y, x) in data.responses().iter().zip(data.designs()) {
        xtx += x.transpose() * x;
        xty += x.transpose() * y;
    }
    xtx.cholesky()
        .map(|c| c.solve(&xty))
        .ok_or_else(|| Error::InvalidState("normal equations are singular".into()))
}

fn initial_point(
    data: &Dataset,
    structure: &LinearStructure,
    init: &InitMode,
) -> Result<(DVector<f64>, ThetaVector)> {
    match init {
        InitMode::Given { beta, theta } => {
            if beta.len() != data.ncovariates() || theta.len() != structure.nparams() {
                return Err(Error::InvalidArgument(
                    "initial point has wrong length".into(),
                ));
            }
            let theta = ThetaVector::new(theta);
            if !structure.is_valid(&theta) {
                return Err(Error::InvalidState("initial V(theta) is not PDS".into()));
            }
            Ok((DVector::from_column_slice(beta), theta))
        }
        InitMode::Ols => {
            let beta = ols_beta(data)?;
            let k = data.dim();
            let scatter = data
                .residuals(&beta)
                .iter()
                .fold(DMatrix::zeros(k, k), |acc, r| acc + r * r.transpose())
                / data.len() as f64;
            let s = SymMatrix::new(scatter)?;
            let theta = structure.coordinates(&s)?;
            if structure.is_valid(&theta) {
                return Ok((beta, theta));
            }
            let level = s.matrix().trace() / k as f64;
            let target =
                structure.coordinates(&SymMatrix::new(DMatrix::identity(k, k) * level)?)?;
            let mut t = 0.5;
            for _ in 0..MAX_HALVINGS {
                let cand = ThetaVector::from(&theta.0 * (1.0 - t) + &target.0 * t);
                if structure.is_valid(&cand) {
                    return Ok((beta, cand));
                }
                t = 0.5 * (1.0 + t);
            }
            if structure.is_valid(&target) {
                return Ok((beta, target));
            }
            Err(Error::InvalidState(
                "could not find a PDS starting value for theta".into(),
            ))
        }
    }
}

/// One alternating update: weighted GLS for `beta` with weights `w1(d_i)`,
/// then the weighted projection step for `theta` with `w2(d_i)`, `w3(d_i)`.
/// Steps that leave the PDS cone are halved.
pub fn irls_step(
    data: &Dataset,
    structure: &LinearStructure,
    triple: &WeightTriple,
    beta: &DVector<f64>,
    theta: &ThetaVector,
) -> Result<(DVector<f64>, ThetaVector)> {
    let v = structure
        .evaluate_pds(theta)
        .map_err(|e| Error::InvalidState(format!("V(theta) is not PDS: {e}")))?;
    let vinv = v.inverse();
    let q = data.ncovariates();
    let k = data.dim();
    let n = data.len() as f64;

    let mut a = DMatrix::zeros(q, q);
    let mut b = DVector::zeros(q);
    for (r, (y, x)) in data
        .residuals(beta)
        .iter()
        .zip(data.responses().iter().zip(data.designs()))
    {
        let w = triple.w1(v.mahalanobis_sq(r).max(0.0).sqrt());
        let xtv = x.transpose() * vinv;
        a += &xtv * x * w;
        b += xtv * y * w;
    }
    let beta_new = a
        .clone()
        .cholesky()
        .map(|c| c.solve(&b))
        .or_else(|| a.lu().solve(&b))
        .ok_or_else(|| Error::InvalidState("weighted normal equations are singular".into()))?;

    let mut scatter = DMatrix::zeros(k, k);
    let mut w3_sum = 0.0;
    for r in data.residuals(&beta_new) {
        let d = v.mahalanobis_sq(&r).max(0.0).sqrt();
        scatter += &r * r.transpose() * triple.w2(d);
        w3_sum += triple.w3(d);
    }
    let m3 = w3_sum / n;
    if !(m3.abs() > 0.0) || !m3.is_finite() {
        return Err(Error::InvalidState(format!("average w3 weight is {m3}")));
    }
    let proj = structure.weighted(&v)?;
    let target = proj.project_coordinates(&vec(&(scatter / n))) / m3;

    let step = &target - &theta.0;
    let mut t = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let cand = ThetaVector::from(&theta.0 + &step * t);
        if structure.is_valid(&cand) {
            return Ok((beta_new, cand));
        }
        t *= 0.5;
    }
    Err(Error::PdsCone(MAX_HALVINGS))
}

fn rel_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    (new - old).norm() / (1.0 + old.norm())
}

/// Solves the estimating equations by alternating reweighted steps.
pub fn fit(
    data: &Dataset,
    structure: &LinearStructure,
    triple: &WeightTriple,
    options: &FitOptions,
) -> Result<FitResult> {
    let (n, k, q, l) = (
        data.len(),
        data.dim(),
        data.ncovariates(),
        structure.nparams(),
    );
    if structure.dim() != k || triple.dim() != k {
        return Err(Error::InvalidArgument(format!(
            "data have dimension {k}, structure {}, weights {}",
            structure.dim(),
            triple.dim()
        )));
    }
    if n <= q || n * k <= l {
        return Err(Error::InvalidArgument(format!(
            "need n > q and n k > l (n = {n}, k = {k}, q = {q}, l = {l})"
        )));
    }
    let (mut beta, mut theta) = initial_point(data, structure, &options.init)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    while iterations < options.max_iter {
        let (b, t) = irls_step(data, structure, triple, &beta, &theta)?;
        iterations += 1;
        last_change = rel_change(&b, &beta).max(rel_change(&t.0, &theta.0));
        beta = b;
        theta = t;
        if last_change < options.tol {
            converged = true;
            break;
        }
    }
    let pds_valid = structure.is_valid(&theta);
    let (distances, psi_norm) = if pds_valid {
        let v: PdsMatrix = structure.evaluate_pds(&theta)?;
        let d = data
            .residuals(&beta)
            .iter()
            .map(|r| v.mahalanobis_sq(r).max(0.0).sqrt())
            .collect();
        let (pb, pt) = psi_residual(data, structure, triple, &beta, &theta)?;
        (d, (pb.norm_squared() + pt.norm_squared()).sqrt())
    } else {
        (vec![f64::NAN; n], f64::NAN)
    };
    Ok(FitResult {
        beta: beta.iter().cloned().collect(),
        theta: theta.0.iter().cloned().collect(),
        distances,
        iterations,
        converged,
        pds_valid,
        last_change,
        psi_norm,
        local_solution: triple.family() == Family::SRho,
    })
}

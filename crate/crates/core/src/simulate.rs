//! Monte Carlo checks of the limiting covariances: projection of radial
//! type random matrices and the sampling distribution of fitted `theta`.
//!
//! Every replicate draws from its own stream `(seed, replicate index)` and
//! results are reduced in replicate order, so reports do not depend on the
//! thread count.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{limit_covariances, sigma12};
use crate::error::{Error, Result};
use crate::estimators::{fit, Dataset, FitOptions};
use crate::foundations::{matrix_rows, rel_frobenius, symmetrize, vec};
use crate::spherical::{stream_rng, SphericalLaw};
use crate::structure::{LinearStructure, ThetaVector};
use crate::weights::WeightTriple;

/// Stream reserved for drawing fixed designs.
const DESIGN_STREAM: u64 = u64::MAX;
/// Minimum replicate count for an accepted radial report.
pub const MIN_RADIAL_REPLICATES: usize = 1000;
/// Largest tolerated fraction of failed fits.
pub const MAX_FAILURE_RATE: f64 = 0.01;

fn standard_normal(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Empirical mean and covariance (divisor `m - 1`) of the rows.
fn mean_and_cov(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let p = samples[0].len();
    let m = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(p), |a, x| a + x) / m;
    let mut cov = DMatrix::zeros(p, p);
    for x in samples {
        let c = x - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    let denom = (m - 1.0).max(1.0);
    (mean, symmetrize(&(cov / denom)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProjectionReport {
    pub structure: String,
    pub theta0: Vec<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Estimated `eta` in `E[T] = eta theta0`.
    pub eta_hat: f64,
    /// Least-squares fit of `(sigma1, sigma2)` to the empirical `var(T)`.
    pub sigma1_hat: f64,
    pub sigma2_hat: f64,
    pub empirical_cov_theta: Vec<Vec<f64>>,
    pub theory_cov_theta: Vec<Vec<f64>>,
    pub empirical_cov_vec_m: Vec<Vec<f64>>,
    pub theory_cov_vec_m: Vec<Vec<f64>>,
    pub rel_err_theta: f64,
    pub rel_err_vec_m: f64,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub accepted: bool,
    pub replicates: usize,
    pub seed: u64,
}

/// Draws `N = S^{1/2} R S^{1/2}` with `vec R` zero-mean Gaussian with
/// covariance `sigma1 (I + K) + sigma2 vec(I) vec(I)'`, projects it onto the
/// structure and compares the empirical covariances of `T` and `vec M` with
/// their limits.
pub fn radial_projection_experiment(
    structure: &LinearStructure,
    theta0: &ThetaVector,
    sigma1: f64,
    sigma2: f64,
    replicates: usize,
    seed: u64,
    tolerance: f64,
) -> Result<RadialProjectionReport> {
    let k = structure.dim();
    let kf = k as f64;
    if !(sigma1 >= 0.0) || !(sigma2 >= -2.0 * sigma1 / kf) {
        return Err(Error::InvalidParameters(format!(
            "need sigma1 >= 0 and sigma2 >= -2 sigma1/k, got ({sigma1}, {sigma2})"
        )));
    }
    if replicates < 2 {
        return Err(Error::InvalidParameters(
            "need at least 2 replicates".into(),
        ));
    }
    let sigma = structure.evaluate_pds(theta0)?;
    let proj = structure.weighted(&sigma)?;
    let root = sigma.sqrt().clone();
    // R = G + s tr(G)/k I with G symmetric Gaussian has the sigma2 component
    // 2 sigma1 ((1+s)^2 - 1)/k along vec(I) vec(I)'
    let shift = (1.0 + kf * sigma2 / (2.0 * sigma1)).sqrt() - 1.0;
    let (off_sd, diag_sd) = (sigma1.sqrt(), (2.0 * sigma1).sqrt());

    let draws: Vec<(DVector<f64>, DVector<f64>)> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let r = if sigma1 > 0.0 {
                let mut g = DMatrix::zeros(k, k);
                for j in 0..k {
                    for a in j..k {
                        let sd = if a == j { diag_sd } else { off_sd };
                        let v = sd * standard_normal(&mut rng);
                        g[(a, j)] = v;
                        g[(j, a)] = v;
                    }
                }
                let t = g.trace();
                g + DMatrix::identity(k, k) * (shift * t / kf)
            } else {
                DMatrix::identity(k, k) * (sigma2.sqrt() * standard_normal(&mut rng))
            };
            let n = &root * r * &root;
            let t = proj.project_coordinates(&vec(&n));
            let m = structure.stacked() * &t;
            (t, m)
        })
        .collect();

    let ts: Vec<DVector<f64>> = draws.iter().map(|d| d.0.clone()).collect();
    let ms: Vec<DVector<f64>> = draws.into_iter().map(|d| d.1).collect();
    let (mean_t, cov_t) = mean_and_cov(&ts);
    let (_, cov_m) = mean_and_cov(&ms);
    let theory = limit_covariances(structure, theta0, sigma1, sigma2)?;

    let th = &theta0.0;
    let eta_hat = th.dot(&mean_t) / th.norm_squared();
    let (sigma1_hat, sigma2_hat) =
        fit_sigmas(&cov_t, &(proj.gram_inverse() * 2.0), &(th * th.transpose()));

    let rel_err_theta = rel_frobenius(&cov_t, &theory.cov_theta);
    let rel_err_vec_m = rel_frobenius(&cov_m, &theory.cov_vec_v);
    let max_rel_err = rel_err_theta.max(rel_err_vec_m);
    Ok(RadialProjectionReport {
        structure: structure.name().to_string(),
        theta0: th.iter().cloned().collect(),
        sigma1,
        sigma2,
        eta_hat,
        sigma1_hat,
        sigma2_hat,
        empirical_cov_theta: matrix_rows(&cov_t),
        theory_cov_theta: matrix_rows(&theory.cov_theta),
        empirical_cov_vec_m: matrix_rows(&cov_m),
        theory_cov_vec_m: matrix_rows(&theory.cov_vec_v),
        rel_err_theta,
        rel_err_vec_m,
        max_rel_err,
        tolerance,
        accepted: replicates >= MIN_RADIAL_REPLICATES && max_rel_err <= tolerance,
        replicates,
        seed,
    })
}

/// Least squares for `cov ~ s1 A + s2 B` in the Frobenius inner product;
/// when `A` and `B` are collinear only `s1` is fitted.
fn fit_sigmas(cov: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let aa = a.dot(a);
    let ab = a.dot(b);
    let bb = b.dot(b);
    let ac = a.dot(cov);
    let bc = b.dot(cov);
    let det = aa * bb - ab * ab;
    if det.abs() <= 1e-12 * aa * bb {
        return (ac / aa, 0.0);
    }
    ((bb * ac - ab * bc) / det, (aa * bc - ab * ac) / det)
}

/// Standard Gaussian `k x q` designs, drawn once per experiment.
pub fn gaussian_designs(n: usize, k: usize, q: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = stream_rng(seed, DESIGN_STREAM);
    (0..n)
        .map(|_| DMatrix::from_fn(k, q, |_, _| standard_normal(&mut rng)))
        .collect()
}

/// Gaussian sample `y_i = X_i beta + V(theta)^{1/2} z_i` from stream
/// `(seed, stream)`.
pub fn simulate_dataset(
    structure: &LinearStructure,
    theta: &ThetaVector,
    beta: &DVector<f64>,
    designs: &[DMatrix<f64>],
    seed: u64,
    stream: u64,
) -> Result<Dataset> {
    let v = structure.evaluate_pds(theta)?;
    let law = SphericalLaw::gaussian(structure.dim())?;
    let zs = law.sample_stream(designs.len(), seed, stream)?;
    let ys = designs
        .iter()
        .zip(zs)
        .map(|(x, z)| x * beta + v.sqrt() * z)
        .collect();
    Dataset::new(ys, designs.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorLimitReport {
    pub structure: String,
    pub family: String,
    pub theta0: Vec<f64>,
    pub beta0: Vec<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Empirical covariance of `sqrt(n)(theta_hat - theta0)`.
    pub empirical_cov_theta: Vec<Vec<f64>>,
    pub theory_cov_theta: Vec<Vec<f64>>,
    pub rel_frobenius_err: f64,
    /// Empirical covariance of `sqrt(n)(H(V_hat) - H(V))` for the shape
    /// `H(V) = vec(V)/|V|^{1/k}`.
    pub empirical_cov_shape: Vec<Vec<f64>>,
    pub theory_cov_shape: Vec<Vec<f64>>,
    pub rel_frobenius_err_shape: f64,
    /// `||C vec(V^-1)|| / (||C|| ||vec(V^-1)||)` for the empirical shape
    /// covariance `C`.
    pub shape_annihilation: f64,
    pub mean_scaled_error: Vec<f64>,
    pub n: usize,
    pub replicates: usize,
    pub failed: usize,
    pub mean_iterations: f64,
    pub seed: u64,
}

/// Repeatedly simulates Gaussian data from the model, fits it and compares
/// the spread of `sqrt(n)(theta_hat - theta0)` with its limit.
#[allow(clippy::too_many_arguments)]
pub fn estimator_limit_experiment(
    structure: &LinearStructure,
    theta0: &ThetaVector,
    beta0: &DVector<f64>,
    designs: &[DMatrix<f64>],
    triple: &WeightTriple,
    replicates: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<EstimatorLimitReport> {
    let n = designs.len();
    let k = structure.dim();
    if replicates < 2 {
        return Err(Error::InvalidParameters(
            "need at least 2 replicates".into(),
        ));
    }
    let law = SphericalLaw::gaussian(k)?;
    let (sigma1, sigma2) = sigma12(triple, &law)?;
    let theory = limit_covariances(structure, theta0, sigma1, sigma2)?;
    let sigma = structure.evaluate_pds(theta0)?;
    let kf = k as f64;
    let shape = |v: &DMatrix<f64>| vec(v) / v.determinant().powf(1.0 / kf);
    let shape0 = shape(sigma.matrix());
    let root_n = (n as f64).sqrt();

    // per replicate: scaled theta error, scaled shape error, iterations
    type Outcome = Option<(DVector<f64>, DVector<f64>, usize)>;
    let outcomes: Vec<Outcome> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let data = simulate_dataset(structure, theta0, beta0, designs, seed, r).ok()?;
            let res = fit(&data, structure, triple, options).ok()?;
            if !res.converged || !res.pds_valid {
                return None;
            }
            let th = res.theta_vector();
            let v = structure.evaluate(&th).ok()?;
            let et = (&th.0 - &theta0.0) * root_n;
            let es = (shape(v.matrix()) - &shape0) * root_n;
            Some((et, es, res.iterations))
        })
        .collect();

    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    if failed as f64 > MAX_FAILURE_RATE * replicates as f64 {
        return Err(Error::ReplicateFailures { failed, replicates });
    }
    let ok: Vec<_> = outcomes.into_iter().flatten().collect();
    let ets: Vec<DVector<f64>> = ok.iter().map(|o| o.0.clone()).collect();
    let ess: Vec<DVector<f64>> = ok.iter().map(|o| o.1.clone()).collect();
    let mean_iterations = ok.iter().map(|o| o.2 as f64).sum::<f64>() / ok.len() as f64;
    let (mean_t, cov_t) = mean_and_cov(&ets);
    let (_, cov_s) = mean_and_cov(&ess);
    let vinv = vec(sigma.inverse());
    let shape_annihilation = (&cov_s * &vinv).norm() / (cov_s.norm() * vinv.norm());

    Ok(EstimatorLimitReport {
        structure: structure.name().to_string(),
        family: triple.family().to_string(),
        theta0: theta0.0.iter().cloned().collect(),
        beta0: beta0.iter().cloned().collect(),
        sigma1,
        sigma2,
        rel_frobenius_err: rel_frobenius(&cov_t, &theory.cov_theta),
        empirical_cov_theta: matrix_rows(&cov_t),
        theory_cov_theta: matrix_rows(&theory.cov_theta),
        rel_frobenius_err_shape: rel_frobenius(&cov_s, &theory.cov_shape),
        empirical_cov_shape: matrix_rows(&cov_s),
        theory_cov_shape: matrix_rows(&theory.cov_shape),
        shape_annihilation,
        mean_scaled_error: mean_t.iter().cloned().collect(),
        n,
        replicates,
        failed,
        mean_iterations,
        seed,
    })
}

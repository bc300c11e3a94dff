//! Limiting-variance scalars, limit covariance matrices of structured
//! estimators, delta-method variances and the breakdown/cutoff map for
//! biweight S-estimators.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foundations::{symmetrize, PdsMatrix};
use crate::spherical::SphericalLaw;
use crate::structure::{LinearStructure, ThetaVector};
use crate::weights::{check_gamma_nondegeneracy, Biweight, Family, RhoFunction, WeightTriple};

/// Search interval for the cutoff constant.
pub const CUTOFF_BRACKET: (f64, f64) = (0.05, 200.0);
const ROOT_TOL: f64 = 1e-10;
const DEGENERATE_TOL: f64 = 1e-10;
/// Relative tolerance for order-zero homogeneity checks.
pub const HOMOGENEITY_TOL: f64 = 1e-8;

/// The unbounded `rho(s) = s^2/2`, whose S-functional is least squares.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticRho;

impl RhoFunction for QuadraticRho {
    fn cutoff(&self) -> f64 {
        f64::INFINITY
    }
    fn rho(&self, s: f64) -> f64 {
        0.5 * s * s
    }
    fn drho(&self, s: f64) -> f64 {
        s
    }
    fn ddrho(&self, _s: f64) -> f64 {
        1.0
    }
    fn sup_rho(&self) -> f64 {
        f64::INFINITY
    }
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
}

fn finite_kinks(rho: &dyn RhoFunction) -> Vec<f64> {
    rho.kinks().into_iter().filter(|c| c.is_finite()).collect()
}

fn check_dim(triple: &WeightTriple, law: &SphericalLaw) -> Result<()> {
    if triple.dim() != law.dim() {
        return Err(Error::InvalidArgument(format!(
            "weight triple has dimension {} but the law has {}",
            triple.dim(),
            law.dim()
        )));
    }
    Ok(())
}

/// `(gamma1, gamma2)`.
pub fn gammas(triple: &WeightTriple, law: &SphericalLaw) -> Result<(f64, f64)> {
    check_dim(triple, law)?;
    let k = law.dim() as f64;
    let kinks = triple.kinks();
    let g1 = law.expect(
        |r| triple.dw2(r) * r.powi(3) + k * (k + 2.0) * triple.w3(r),
        &kinks,
    )? / (k * (k + 2.0));
    let g2 = law.expect(
        |r| (k + 2.0) * triple.dw3(r) * r - triple.dw2(r) * r.powi(3),
        &kinks,
    )? / (2.0 * k * (k + 2.0));
    Ok((g1, g2))
}

/// `(sigma1, sigma2)` of the limiting covariance
/// `2 sigma1 (L'(S^-1 x S^-1)L)^-1 + sigma2 theta theta'`.
pub fn sigma12(triple: &WeightTriple, law: &SphericalLaw) -> Result<(f64, f64)> {
    let (g1, g2) = gammas(triple, law)?;
    let kd = law.dim();
    check_gamma_nondegeneracy(g1, g2, kd)?;
    let k = kd as f64;
    let kinks = triple.kinks();
    let num1 = law.expect(|r| triple.w2(r).powi(2) * r.powi(4), &kinks)?;
    let den1 = law.expect(
        |r| triple.dw2(r) * r.powi(3) + k * (k + 2.0) * triple.w3(r),
        &kinks,
    )?;
    let num2 = law.expect(
        |r| (triple.w2(r) * r * r - k * triple.w3(r)).powi(2),
        &kinks,
    )?;
    let den2 = law.expect(
        |r| triple.dw2(r) * r.powi(3) + 2.0 * k * triple.w3(r) - k * triple.dw3(r) * r,
        &kinks,
    )?;
    let sigma1 = k * (k + 2.0) * num1 / (den1 * den1);
    let sigma2 = -2.0 * sigma1 / k + 4.0 * num2 / (den2 * den2);
    Ok((sigma1, sigma2))
}

/// `(alpha, lambda)` of the regression S-estimator.
pub fn regression_scalars(rho: &dyn RhoFunction, law: &SphericalLaw) -> Result<(f64, f64)> {
    let k = law.dim() as f64;
    let kinks = finite_kinks(rho);
    let alpha = law.expect(
        |r| (1.0 - 1.0 / k) * rho.drho_over_s(r) + rho.ddrho(r) / k,
        &kinks,
    )?;
    let lambda = law.expect(|r| rho.drho(r).powi(2), &kinks)? / (k * alpha * alpha);
    Ok((alpha, lambda))
}

/// `(delta1, delta2)`.
pub fn deltas(rho: &dyn RhoFunction, law: &SphericalLaw) -> Result<(f64, f64)> {
    let k = law.dim() as f64;
    let kinks = finite_kinks(rho);
    let d1 = law.expect(
        |r| rho.ddrho(r) * r * r + (k + 1.0) * rho.drho(r) * r,
        &kinks,
    )? / (k + 2.0);
    let d2 = law.expect(|r| rho.drho(r) * r, &kinks)?;
    Ok((d1, d2))
}

/// `b0 = E[rho(||z||)]`.
pub fn consistency_constant(rho: &dyn RhoFunction, law: &SphericalLaw) -> Result<f64> {
    law.expect(|r| rho.rho(r), &finite_kinks(rho))
}

/// `sigma3 = E[(rho - b0)^2] / delta2^2`.
pub fn scale_scalar(rho: &dyn RhoFunction, law: &SphericalLaw, b0: f64) -> Result<f64> {
    let (_, d2) = deltas(rho, law)?;
    if !(d2.abs() >= DEGENERATE_TOL) {
        return Err(Error::DegenerateScale(d2));
    }
    let num = law.expect(|r| (rho.rho(r) - b0).powi(2), &finite_kinks(rho))?;
    Ok(num / (d2 * d2))
}

/// S-estimator weight triple for the biweight with cutoff `c`, with `b0`
/// calibrated under the standard Gaussian.
pub fn biweight_triple(k: usize, c: f64) -> Result<WeightTriple> {
    let law = SphericalLaw::gaussian(k)?;
    let rho: Arc<dyn RhoFunction> = Arc::new(Biweight::new(c)?);
    let b0 = consistency_constant(rho.as_ref(), &law)?;
    WeightTriple::s_rho(rho, k, Some(b0))
}

/// All scalars for one `(family, k, c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticScalars {
    pub family: Family,
    pub k: usize,
    pub cutoff: Option<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub b0: f64,
}

impl AsymptoticScalars {
    /// S-estimator scalars for a rho-function under `law`.
    pub fn s_rho(rho: Arc<dyn RhoFunction>, law: &SphericalLaw) -> Result<Self> {
        let k = law.dim();
        let b0 = consistency_constant(rho.as_ref(), law)?;
        let triple = WeightTriple::s_rho(rho.clone(), k, Some(b0))?;
        Self::assemble(Family::SRho, &triple, rho.as_ref(), law, b0)
    }

    /// Gaussian maximum likelihood; the rho-based scalars are those of
    /// `rho(s) = s^2/2`.
    pub fn gaussian_ml(k: usize) -> Result<Self> {
        let law = SphericalLaw::gaussian(k)?;
        let rho = QuadraticRho;
        let b0 = consistency_constant(&rho, &law)?;
        Self::assemble(
            Family::GaussianMl,
            &WeightTriple::gaussian_ml(k),
            &rho,
            &law,
            b0,
        )
    }

    fn assemble(
        family: Family,
        triple: &WeightTriple,
        rho: &dyn RhoFunction,
        law: &SphericalLaw,
        b0: f64,
    ) -> Result<Self> {
        let (gamma1, gamma2) = gammas(triple, law)?;
        let (sigma1, sigma2) = sigma12(triple, law)?;
        let (alpha, lambda) = regression_scalars(rho, law)?;
        let (delta1, delta2) = deltas(rho, law)?;
        let sigma3 = scale_scalar(rho, law, b0)?;
        let cutoff = Some(rho.cutoff()).filter(|c| c.is_finite());
        Ok(Self {
            family,
            k: law.dim(),
            cutoff,
            sigma1,
            sigma2,
            sigma3,
            lambda,
            alpha,
            gamma1,
            gamma2,
            delta1,
            delta2,
            b0,
        })
    }

    /// `1/lambda`.
    pub fn are_regression(&self) -> f64 {
        1.0 / self.lambda
    }

    /// `1/sigma1`.
    pub fn are_shape_direction(&self) -> f64 {
        1.0 / self.sigma1
    }

    /// `1/(2 k sigma3)`; least squares has `sigma3 = 1/(2k)`.
    pub fn are_scale(&self) -> f64 {
        1.0 / (2.0 * self.k as f64 * self.sigma3)
    }
}

/// Scalars of the biweight S-estimator at the standard Gaussian.
pub fn biweight_scalars(k: usize, c: f64) -> Result<AsymptoticScalars> {
    let law = SphericalLaw::gaussian(k)?;
    AsymptoticScalars::s_rho(Arc::new(Biweight::new(c)?), &law)
}

fn breakdown_with_law(law: &SphericalLaw, c: f64) -> Result<f64> {
    let rho = Biweight::new(c)?;
    Ok(consistency_constant(&rho, law)? / rho.sup_rho())
}

/// Asymptotic breakdown point `E[rho_c(||z||)] / (c^2/6)` of the biweight
/// S-estimator.
pub fn breakdown_for_cutoff(k: usize, c: f64) -> Result<f64> {
    breakdown_with_law(&SphericalLaw::gaussian(k)?, c)
}

/// Cutoff `c` whose biweight S-estimator has breakdown point `eps`.
pub fn cutoff_for_breakdown(k: usize, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "breakdown point must lie in (0, 0.5], got {eps}"
        )));
    }
    let law = SphericalLaw::gaussian(k)?;
    let f = |c: f64| breakdown_with_law(&law, c).map(|b| b - eps);
    let (mut lo, mut hi) = CUTOFF_BRACKET;
    let (f_lo, f_hi) = (f(lo)?, f(hi)?);
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::RootFind(format!(
            "breakdown {eps} not bracketed by c in [{lo}, {hi}] (residuals {f_lo:e}, {f_hi:e})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm.abs() <= ROOT_TOL {
            return Ok(mid);
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::RootFind(format!(
        "bisection stalled on [{lo}, {hi}] for breakdown {eps}"
    )))
}

/// `d vec(V/|V|^{1/k}) / d vec(V)' = |V|^{-1/k} (I - vec(V) vec(V^-1)' / k)`.
pub fn shape_jacobian(sigma: &PdsMatrix) -> DMatrix<f64> {
    let k = sigma.dim();
    let v = sigma.sym().vec();
    let vinv = crate::foundations::vec(sigma.inverse());
    let scale = sigma.det_pow(-1.0 / k as f64);
    (DMatrix::identity(k * k, k * k) - &v * vinv.transpose() / k as f64) * scale
}

/// `d (theta/||theta||) / d theta' = (I - theta theta'/||theta||^2) / ||theta||`.
pub fn direction_jacobian(theta: &ThetaVector) -> DMatrix<f64> {
    let t = &theta.0;
    let n2 = t.norm_squared();
    let l = t.len();
    (DMatrix::identity(l, l) - t * t.transpose() / n2) / n2.sqrt()
}

/// Jacobian of `theta / |V(theta)|^{1/k}`:
/// `|V|^{-1/k} (I - theta vec(V^-1)' L / k)`.
pub fn direction_det_jacobian(
    structure: &LinearStructure,
    theta: &ThetaVector,
) -> Result<DMatrix<f64>> {
    let sigma = structure.evaluate_pds(theta)?;
    let k = structure.dim() as f64;
    let l = theta.len();
    let row = crate::foundations::vec(sigma.inverse()).transpose() * structure.stacked();
    Ok((DMatrix::identity(l, l) - &theta.0 * row / k) * sigma.det_pow(-1.0 / k))
}

/// Gradient of the scale `|V|^{1/(2k)}` with respect to `vec(V)`, as a
/// `1 x k^2` row: `|V|^{1/(2k)} vec(V^-1)' / (2k)`.
pub fn scale_gradient(sigma: &PdsMatrix) -> DMatrix<f64> {
    let k = sigma.dim() as f64;
    let g = crate::foundations::vec(sigma.inverse()) * (sigma.det_pow(0.5 / k) / (2.0 * k));
    DMatrix::from_row_slice(1, g.len(), g.as_slice())
}

/// `J cov J'`, symmetrized. When `base` is given the rows of `J` must
/// annihilate it: `||J base|| <= 1e-8 ||J|| ||base||`.
pub fn delta_method_variance(
    jacobian: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    base: Option<&DVector<f64>>,
) -> Result<DMatrix<f64>> {
    if jacobian.ncols() != cov.nrows() || !cov.is_square() {
        return Err(Error::InvalidArgument(format!(
            "jacobian is {}x{} but covariance is {}x{}",
            jacobian.nrows(),
            jacobian.ncols(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    if let Some(x) = base {
        if x.len() != jacobian.ncols() {
            return Err(Error::InvalidArgument("base point has wrong length".into()));
        }
        let residual = (jacobian * x).norm();
        let bound = HOMOGENEITY_TOL * jacobian.norm() * x.norm();
        if residual > bound {
            return Err(Error::NotOrderZero { residual, bound });
        }
    }
    Ok(symmetrize(&(jacobian * cov * jacobian.transpose())))
}

/// Limiting covariances of `sqrt(n)` times the estimation error.
#[derive(Debug, Clone)]
pub struct LimitCovariances {
    pub cov_theta: DMatrix<f64>,
    pub cov_vec_v: DMatrix<f64>,
    pub cov_shape: DMatrix<f64>,
    pub cov_direction: DMatrix<f64>,
    pub cov_direction_det: DMatrix<f64>,
    pub var_scale: f64,
}

/// Covariances of `theta`, `vec V`, the shape `V/|V|^{1/k}`, the
/// directions `theta/||theta||` and `theta/|V|^{1/k}` and the scale
/// `|V|^{1/(2k)}`.
pub fn limit_covariances(
    structure: &LinearStructure,
    theta0: &ThetaVector,
    sigma1: f64,
    sigma2: f64,
) -> Result<LimitCovariances> {
    let k = structure.dim() as f64;
    if !(sigma1 >= 0.0) || sigma2 < -2.0 * sigma1 / k {
        return Err(Error::InvalidParameters(format!(
            "need sigma1 >= 0 and sigma2 >= -2 sigma1/k, got ({sigma1}, {sigma2})"
        )));
    }
    let sigma = structure.evaluate_pds(theta0)?;
    let proj = structure.weighted(&sigma)?;
    let ginv = proj.gram_inverse();
    let t = &theta0.0;
    let l = structure.stacked();

    let cov_theta = symmetrize(&(ginv * (2.0 * sigma1) + t * t.transpose() * sigma2));
    let cov_vec_v = symmetrize(&(l * &cov_theta * l.transpose()));

    let vs = sigma.sym().vec();
    let cov_shape = symmetrize(
        &((proj.sandwich() - &vs * vs.transpose() / k) * (2.0 * sigma1 * sigma.det_pow(-2.0 / k))),
    );

    let n2 = t.norm_squared();
    let p = DMatrix::identity(t.len(), t.len()) - t * t.transpose() / n2;
    let cov_direction = symmetrize(&(&p * ginv * &p * (2.0 * sigma1 / n2)));

    let jd = direction_det_jacobian(structure, theta0)?;
    let cov_direction_det = delta_method_variance(&jd, &cov_theta, Some(t))?;

    let var_scale = 0.25 * (2.0 * sigma1 / k + sigma2) * sigma.det_pow(1.0 / k);
    Ok(LimitCovariances {
        cov_theta,
        cov_vec_v,
        cov_shape,
        cov_direction,
        cov_direction_det,
        var_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foundations::{commutation_matrix, kron, max_abs, min_eigenvalue, vec};
    use crate::testing::random_pds;
    use crate::weights::WeightFunctions;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_ml_gammas_and_sigmas() {
        for k in [1, 2, 5, 10] {
            let law = SphericalLaw::gaussian(k).unwrap();
            let t = WeightTriple::gaussian_ml(k);
            let (g1, g2) = gammas(&t, &law).unwrap();
            assert!((g1 - 1.0).abs() < 1e-10 && g2.abs() < 1e-12);
            let (s1, s2) = sigma12(&t, &law).unwrap();
            assert!((s1 - 1.0).abs() < 1e-8, "k={k} s1={s1}");
            assert!(s2.abs() < 1e-8, "k={k} s2={s2}");
        }
    }

    #[test]
    fn quadratic_rho_deltas_equal_k() {
        for k in [1, 3, 6] {
            let law = SphericalLaw::gaussian(k).unwrap();
            let (d1, d2) = deltas(&QuadraticRho, &law).unwrap();
            assert!((d1 - k as f64).abs() < 1e-10);
            assert!((d2 - k as f64).abs() < 1e-10);
            let (alpha, lambda) = regression_scalars(&QuadraticRho, &law).unwrap();
            assert!((alpha - 1.0).abs() < 1e-12 && (lambda - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_ml_scalars_match_least_squares() {
        let s = AsymptoticScalars::gaussian_ml(4).unwrap();
        assert!((s.are_scale() - 1.0).abs() < 1e-10);
        assert!((s.are_regression() - 1.0).abs() < 1e-10);
        assert_eq!(s.cutoff, None);
    }

    #[test]
    fn biweight_gammas_nondegenerate_at_half_breakdown() {
        let law = SphericalLaw::gaussian(2).unwrap();
        let t = biweight_triple(2, 2.661).unwrap();
        let (g1, g2) = gammas(&t, &law).unwrap();
        assert!((g1 - 2.0 * g2).abs() > 1e-3);
        assert!(check_gamma_nondegeneracy(g1, g2, 2).is_ok());
    }

    struct Degenerate {
        k: f64,
    }

    impl WeightFunctions for Degenerate {
        fn w1(&self, _s: f64) -> f64 {
            1.0
        }
        fn w2(&self, s: f64) -> f64 {
            self.k * (self.k + 2.0) / (2.0 * s * s)
        }
        fn w3(&self, _s: f64) -> f64 {
            1.0
        }
        fn dw2(&self, s: f64) -> f64 {
            -self.k * (self.k + 2.0) / s.powi(3)
        }
        fn dw3(&self, _s: f64) -> f64 {
            0.0
        }
    }

    #[test]
    fn synthetic_degenerate_gammas_are_reported() {
        let law = SphericalLaw::gaussian(3).unwrap();
        let t = WeightTriple::m_estimator(3, Arc::new(Degenerate { k: 3.0 }));
        assert!(matches!(sigma12(&t, &law), Err(Error::DegenerateGammas(_))));
    }

    #[test]
    fn sigma1_agrees_with_rho_form() {
        // for S-estimators sigma1 = k E[rho'^2 r^2] / ((k+2) delta1^2)
        for (k, c) in [(2, 2.661), (3, 4.0), (5, 4.652), (10, 6.776)] {
            let law = SphericalLaw::gaussian(k).unwrap();
            let rho = Biweight::new(c).unwrap();
            let s = biweight_scalars(k, c).unwrap();
            let (d1, _) = deltas(&rho, &law).unwrap();
            let kf = k as f64;
            let alt = kf * law.expect(|r| (rho.drho(r) * r).powi(2), &[c]).unwrap()
                / ((kf + 2.0) * d1 * d1);
            assert!((s.sigma1 - alt).abs() < 1e-9 * alt, "k={k}");
        }
    }

    #[test]
    fn sigma3_cross_check_identity() {
        for (k, c) in [(1, 1.547), (2, 2.661), (2, 4.115), (3, 3.2), (5, 4.652)] {
            let s = biweight_scalars(k, c).unwrap();
            let rhs = (2.0 * s.sigma1 / k as f64 + s.sigma2) / 4.0;
            assert!((s.sigma3 - rhs).abs() < 1e-6, "k={k} c={c}");
        }
    }

    #[test]
    fn sigma2_lower_bound_holds() {
        for k in [1, 2, 5, 10] {
            for eps in [0.05, 0.25, 0.5] {
                let c = cutoff_for_breakdown(k, eps).unwrap();
                let s = biweight_scalars(k, c).unwrap();
                assert!(s.sigma1 >= 0.0);
                assert!(s.sigma2 >= -2.0 * s.sigma1 / k as f64);
            }
        }
    }

    #[test]
    fn degenerate_delta2_is_rejected() {
        #[derive(Debug)]
        struct Flat;
        impl RhoFunction for Flat {
            fn cutoff(&self) -> f64 {
                1.0
            }
            fn rho(&self, _s: f64) -> f64 {
                0.0
            }
            fn drho(&self, _s: f64) -> f64 {
                0.0
            }
            fn ddrho(&self, _s: f64) -> f64 {
                0.0
            }
            fn sup_rho(&self) -> f64 {
                0.0
            }
        }
        let law = SphericalLaw::gaussian(2).unwrap();
        assert!(matches!(
            scale_scalar(&Flat, &law, 0.0),
            Err(Error::DegenerateScale(_))
        ));
    }

    #[test]
    fn cutoff_table_spot_values() {
        let cases = [
            (2, 0.50, 2.661),
            (1, 0.05, 7.545),
            (10, 0.20, 11.719),
            (5, 0.25, 7.242),
        ];
        for (k, eps, c) in cases {
            let got = cutoff_for_breakdown(k, eps).unwrap();
            assert!((got - c).abs() <= 1e-3, "k={k} eps={eps} got {got}");
            let back = breakdown_for_cutoff(k, got).unwrap();
            assert!((back - eps).abs() <= 1e-8);
        }
    }

    #[test]
    fn cutoff_rejects_out_of_range() {
        for eps in [0.0, -0.1, 0.6, f64::NAN] {
            assert!(matches!(
                cutoff_for_breakdown(2, eps),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn efficiencies_decrease_with_breakdown() {
        for k in [2, 5, 10] {
            let mut prev: Option<(f64, f64, f64)> = None;
            for i in 1..=10 {
                let eps = 0.05 * i as f64;
                let s = biweight_scalars(k, cutoff_for_breakdown(k, eps).unwrap()).unwrap();
                let cur = (s.are_regression(), s.are_shape_direction(), s.are_scale());
                if let Some(p) = prev {
                    assert!(cur.0 < p.0 && cur.1 < p.1 && cur.2 < p.2, "k={k} eps={eps}");
                }
                prev = Some(cur);
            }
        }
    }

    #[test]
    fn large_cutoff_recovers_least_squares() {
        let s = biweight_scalars(3, 60.0).unwrap();
        assert!((s.are_regression() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn unstructured_cov_vec_v_matches_kronecker_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 2..=4 {
            let st = LinearStructure::unstructured(k).unwrap();
            let sigma = random_pds(k, &mut rng);
            let theta = st.coordinates(sigma.sym()).unwrap();
            let (s1, s2) = (1.3, -0.2);
            let lc = limit_covariances(&st, &theta, s1, s2).unwrap();
            let kk = commutation_matrix(k);
            let id = DMatrix::identity(k * k, k * k);
            let v = sigma.sym().vec();
            let expected =
                (id + kk) * kron(sigma.matrix(), sigma.matrix()) * s1 + &v * v.transpose() * s2;
            assert!(max_abs(&(lc.cov_vec_v - expected)) <= 1e-8);
        }
    }

    #[test]
    fn shape_covariance_matches_delta_method_and_trace_identity() {
        let st = LinearStructure::compound_symmetry(3).unwrap();
        let theta = ThetaVector::new(&[1.0, 0.5]);
        let sigma = st.evaluate_pds(&theta).unwrap();
        let (s1, s2) = (1.7, 0.4);
        let lc = limit_covariances(&st, &theta, s1, s2).unwrap();
        let j = shape_jacobian(&sigma);
        let via_delta = delta_method_variance(&j, &lc.cov_vec_v, Some(&sigma.sym().vec())).unwrap();
        assert!(max_abs(&(&via_delta - &lc.cov_shape)) <= 1e-10);
        // annihilates vec(Sigma^-1)
        assert!((&lc.cov_shape * vec(sigma.inverse())).norm() <= 1e-10);

        let k = 3.0;
        let proj = st.weighted(&sigma).unwrap();
        let lhs = lc.cov_shape.trace() * sigma.det_pow(2.0 / k) / (2.0 * s1);
        let rhs = proj.sandwich().trace() - sigma.sym().vec().norm_squared() / k;
        assert!((lhs - rhs).abs() <= 1e-8);

        for m in [
            &lc.cov_theta,
            &lc.cov_vec_v,
            &lc.cov_shape,
            &lc.cov_direction,
        ] {
            assert!(min_eigenvalue(m) >= -1e-8);
        }
    }

    #[test]
    fn scale_variance_matches_delta_method() {
        let st = LinearStructure::compound_symmetry(4).unwrap();
        let theta = ThetaVector::new(&[2.0, 0.3]);
        let sigma = st.evaluate_pds(&theta).unwrap();
        let lc = limit_covariances(&st, &theta, 1.2, 0.1).unwrap();
        let g = scale_gradient(&sigma);
        let v = delta_method_variance(&g, &lc.cov_vec_v, None).unwrap();
        assert!((v[(0, 0)] - lc.var_scale).abs() <= 1e-10 * lc.var_scale);
    }

    #[test]
    fn direction_covariances_annihilate_theta() {
        let st = LinearStructure::compound_symmetry(3).unwrap();
        let theta = ThetaVector::new(&[1.0, 0.5]);
        let lc = limit_covariances(&st, &theta, 1.0, 0.0).unwrap();
        assert!((&lc.cov_direction * &theta.0).norm() <= 1e-12);
        let jd = direction_jacobian(&theta);
        let via = delta_method_variance(&jd, &lc.cov_theta, Some(&theta.0)).unwrap();
        assert!(max_abs(&(via - &lc.cov_direction)) <= 1e-12);
        let jdd = direction_det_jacobian(&st, &theta).unwrap();
        assert!((jdd * &theta.0).norm() <= 1e-12);
    }

    #[test]
    fn jacobians_annihilate_base_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for k in 2..=5 {
            for _ in 0..20 {
                let s = random_pds(k, &mut rng);
                let j = shape_jacobian(&s);
                let v = s.sym().vec();
                assert!((&j * &v).norm() <= 1e-10 * j.norm() * v.norm());
            }
        }
    }

    #[test]
    fn shape_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = 1e-6;
        for _ in 0..10 {
            let k = 3;
            let s = random_pds(k, &mut rng);
            let j = shape_jacobian(&s);
            let shape = |m: &DMatrix<f64>| {
                let det = m.determinant();
                vec(m) / det.powf(1.0 / k as f64)
            };
            let mut fd = DMatrix::zeros(k * k, k * k);
            for col in 0..k * k {
                let mut e = DMatrix::zeros(k, k);
                e[(col % k, col / k)] = h;
                let diff = (shape(&(s.matrix() + &e)) - shape(&(s.matrix() - &e))) / (2.0 * h);
                fd.set_column(col, &diff);
            }
            assert!(max_abs(&(fd - &j)) <= 1e-6);
        }
    }

    #[test]
    fn delta_method_rejects_non_homogeneous() {
        let j = DMatrix::identity(3, 3);
        let cov = DMatrix::identity(3, 3);
        let base = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            delta_method_variance(&j, &cov, Some(&base)),
            Err(Error::NotOrderZero { .. })
        ));
        let out = delta_method_variance(&j, &cov, None).unwrap();
        assert_eq!(out, cov);
    }

    #[test]
    fn limit_covariances_reject_invalid_sigmas() {
        let st = LinearStructure::compound_symmetry(3).unwrap();
        let theta = ThetaVector::new(&[1.0, 0.5]);
        assert!(matches!(
            limit_covariances(&st, &theta, 1.0, -1.0),
            Err(Error::InvalidParameters(_))
        ));
    }
}

//! Influence functions of structured covariance functionals at elliptical
//! models, gross-error-sensitivity indices for the biweight S-functionals
//! and the efficiency/robustness tradeoff curve.

use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    biweight_scalars, consistency_constant, cutoff_for_breakdown, deltas, direction_det_jacobian,
    direction_jacobian, AsymptoticScalars,
};
use crate::error::{Error, Result};
use crate::foundations::vec;
use crate::spherical::SphericalLaw;
use crate::structure::{LinearStructure, ThetaVector};
use crate::weights::{Biweight, RhoFunction};

const DEGENERATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
enum Kind {
    GaussianMl,
    SRho { rho: Arc<dyn RhoFunction>, b0: f64 },
}

/// The radial functions `(alpha_C, beta_C, gamma_C)` that characterize the
/// influence function of a covariance functional at an elliptical model.
#[derive(Debug, Clone)]
pub struct InfluenceWeights {
    kind: Kind,
    k: usize,
    pub delta1: f64,
    pub delta2: f64,
}

impl InfluenceWeights {
    /// Gaussian maximum likelihood: `alpha_C = beta_C = 1`.
    pub fn gaussian_ml(k: usize) -> Self {
        let kf = k as f64;
        Self {
            kind: Kind::GaussianMl,
            k,
            delta1: kf,
            delta2: kf,
        }
    }

    /// S-functional defined by `rho` with constant `b0`.
    pub fn s_rho(rho: Arc<dyn RhoFunction>, law: &SphericalLaw, b0: f64) -> Result<Self> {
        let (delta1, delta2) = deltas(rho.as_ref(), law)?;
        for (name, d) in [("delta1", delta1), ("delta2", delta2)] {
            if !(d.abs() >= DEGENERATE_TOL) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {d:e} is degenerate"
                )));
            }
        }
        Ok(Self {
            kind: Kind::SRho { rho, b0 },
            k: law.dim(),
            delta1,
            delta2,
        })
    }

    /// Biweight S-functional at the standard Gaussian.
    pub fn biweight(k: usize, c: f64) -> Result<Self> {
        let law = SphericalLaw::gaussian(k)?;
        let rho: Arc<dyn RhoFunction> = Arc::new(Biweight::new(c)?);
        let b0 = consistency_constant(rho.as_ref(), &law)?;
        Self::s_rho(rho, &law, b0)
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// `k rho'(s) / (s delta1)`.
    pub fn alpha_c(&self, s: f64) -> f64 {
        match &self.kind {
            Kind::GaussianMl => 1.0,
            Kind::SRho { rho, .. } => self.k as f64 * rho.drho_over_s(s) / self.delta1,
        }
    }

    /// `rho'(s) s / delta1 - 2 (rho(s) - b0) / delta2`.
    pub fn beta_c(&self, s: f64) -> f64 {
        match &self.kind {
            Kind::GaussianMl => 1.0,
            Kind::SRho { rho, b0 } => {
                rho.drho(s) * s / self.delta1 - 2.0 * (rho.rho(s) - b0) / self.delta2
            }
        }
    }

    /// `alpha_C(s) s^2 / k - beta_C(s)`.
    pub fn gamma_c(&self, s: f64) -> f64 {
        self.alpha_c(s) * s * s / self.k as f64 - self.beta_c(s)
    }

    pub fn kinks(&self) -> Vec<f64> {
        match &self.kind {
            Kind::GaussianMl => Vec::new(),
            Kind::SRho { rho, .. } => rho.kinks().into_iter().filter(|c| c.is_finite()).collect(),
        }
    }
}

/// Influence functions of `vec M` and `theta`.
#[derive(Debug, Clone)]
pub struct StructuredInfluence {
    pub if_vec_m: DVector<f64>,
    pub if_theta: DVector<f64>,
    pub distance: f64,
}

/// Influence of a point mass at `y` on the structured covariance functional
/// at `V(theta0)`.
pub fn if_structured(
    y: &DVector<f64>,
    mu: &DVector<f64>,
    structure: &LinearStructure,
    theta0: &ThetaVector,
    weights: &InfluenceWeights,
) -> Result<StructuredInfluence> {
    let k = structure.dim();
    if y.len() != k || mu.len() != k || weights.dim() != k {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: y {}, mu {}, structure {}, weights {}",
            y.len(),
            mu.len(),
            k,
            weights.dim()
        )));
    }
    let sigma = structure
        .evaluate_pds(theta0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let proj = structure.weighted(&sigma)?;
    let r = y - mu;
    let d = sigma.mahalanobis_sq(&r).max(0.0).sqrt();
    // G^-1 L' vec(S^-1 r r' S^-1)
    let coords = proj.project_coordinates(&vec(&(&r * r.transpose())));
    let if_theta = coords * weights.alpha_c(d) - &theta0.0 * weights.beta_c(d);
    let if_vec_m = structure.stacked() * &if_theta;
    Ok(StructuredInfluence {
        if_vec_m,
        if_theta,
        distance: d,
    })
}

/// Homogeneous-of-order-zero (or scale) targets of the covariance functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HomogeneousTarget {
    /// `V / |V|^{1/k}`.
    Shape,
    /// `theta / ||theta||`.
    Direction,
    /// `|V|^{1/(2k)}`.
    Scale,
    /// `theta / |V(theta)|^{1/k}`.
    DirectionDet,
}

impl FromStr for HomogeneousTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shape" => Ok(Self::Shape),
            "direction" => Ok(Self::Direction),
            "scale" => Ok(Self::Scale),
            "direction-det" => Ok(Self::DirectionDet),
            other => Err(Error::InvalidArgument(format!("unknown target '{other}'"))),
        }
    }
}

/// Influence function of a mapping of the covariance functional.
pub fn if_homogeneous(
    y: &DVector<f64>,
    mu: &DVector<f64>,
    structure: &LinearStructure,
    theta0: &ThetaVector,
    weights: &InfluenceWeights,
    target: HomogeneousTarget,
) -> Result<DVector<f64>> {
    let base = if_structured(y, mu, structure, theta0, weights)?;
    let sigma = structure.evaluate_pds(theta0)?;
    let k = structure.dim() as f64;
    Ok(match target {
        HomogeneousTarget::Shape => {
            let inv = vec(sigma.inverse());
            let tr = inv.dot(&base.if_vec_m);
            (base.if_vec_m - sigma.sym().vec() * (tr / k)) * sigma.det_pow(-1.0 / k)
        }
        HomogeneousTarget::Direction => direction_jacobian(theta0) * &base.if_theta,
        HomogeneousTarget::DirectionDet => {
            direction_det_jacobian(structure, theta0)? * &base.if_theta
        }
        HomogeneousTarget::Scale => DVector::from_element(
            1,
            0.5 * sigma.det_pow(0.5 / k) * weights.gamma_c(base.distance),
        ),
    })
}

/// Gross-error-sensitivity indices of the biweight S-functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GesIndices {
    pub k: usize,
    pub c: f64,
    /// Regression: `sup |rho'| / alpha`.
    pub g1: f64,
    /// Shape and direction: `k sup |rho'(s) s| / ((k+2) delta1)`.
    pub g2: f64,
    /// Scale: `sup |gamma_C| = 2 sup |rho - b0| / delta2`.
    pub g3: f64,
}

/// GES indices at `(k, c)` from the biweight's closed-form suprema.
pub fn ges_indices(k: usize, c: f64) -> Result<GesIndices> {
    ges_from_scalars(&biweight_scalars(k, c)?)
}

fn ges_from_scalars(s: &AsymptoticScalars) -> Result<GesIndices> {
    let c = s
        .cutoff
        .ok_or_else(|| Error::InvalidArgument("GES indices need a bounded rho".into()))?;
    let rho = Biweight::new(c)?;
    let kf = s.k as f64;
    let sup_rho_dev = s.b0.max(rho.sup_rho() - s.b0);
    Ok(GesIndices {
        k: s.k,
        c,
        g1: rho.sup_abs_drho() / s.alpha,
        g2: kf * rho.sup_abs_drho_s() / ((kf + 2.0) * s.delta1),
        g3: 2.0 * sup_rho_dev / s.delta2,
    })
}

/// One point of the efficiency/robustness tradeoff curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub k: usize,
    pub breakdown: f64,
    pub c: f64,
    pub are_regression: f64,
    pub are_shape_direction: f64,
    pub are_scale: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

impl TradeoffRow {
    pub fn index(&self, which: GesIndex) -> f64 {
        match which {
            GesIndex::G1 => self.g1,
            GesIndex::G2 => self.g2,
            GesIndex::G3 => self.g3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GesIndex {
    G1,
    G2,
    G3,
}

/// Tradeoff row at breakdown point `eps`.
pub fn tradeoff_row(k: usize, eps: f64) -> Result<TradeoffRow> {
    let c = cutoff_for_breakdown(k, eps)?;
    let s = biweight_scalars(k, c)?;
    let g = ges_from_scalars(&s)?;
    Ok(TradeoffRow {
        k,
        breakdown: eps,
        c,
        are_regression: s.are_regression(),
        are_shape_direction: s.are_shape_direction(),
        are_scale: s.are_scale(),
        g1: g.g1,
        g2: g.g2,
        g3: g.g3,
    })
}

/// Rows for every `(k, eps)` pair, ordered by `k` then `eps`. Grid points are
/// evaluated in parallel.
pub fn tradeoff_curve(dims: &[usize], grid: &[f64]) -> Result<Vec<TradeoffRow>> {
    let pairs: Vec<(usize, f64)> = dims
        .iter()
        .flat_map(|&k| grid.iter().map(move |&e| (k, e)))
        .collect();
    pairs.par_iter().map(|&(k, e)| tradeoff_row(k, e)).collect()
}

/// Location of the minimum of one GES index along the curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GesArgmin {
    pub index: GesIndex,
    pub k: usize,
    pub row: TradeoffRow,
}

/// Minimizes a GES index over breakdown points: the best grid point is
/// refined by golden-section search between its grid neighbours.
pub fn ges_argmin(k: usize, rows: &[TradeoffRow], which: GesIndex) -> Result<GesArgmin> {
    let mut mine: Vec<&TradeoffRow> = rows.iter().filter(|r| r.k == k).collect();
    mine.sort_by(|a, b| a.breakdown.total_cmp(&b.breakdown));
    let best = mine
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.index(which).total_cmp(&b.1.index(which)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InvalidArgument(format!("no tradeoff rows for k = {k}")))?;
    let lo = mine[best.saturating_sub(1)].breakdown;
    let hi = mine[(best + 1).min(mine.len() - 1)].breakdown;
    let mut row = *mine[best];
    if hi > lo {
        let refined = golden_section(lo, hi, 1e-6, |e| tradeoff_row(k, e).map(|r| r.index(which)))?;
        let cand = tradeoff_row(k, refined)?;
        if cand.index(which) <= row.index(which) {
            row = cand;
        }
    }
    Ok(GesArgmin {
        index: which,
        k,
        row,
    })
}

fn golden_section<F>(mut a: f64, mut b: f64, tol: f64, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::QuadraticRho;
    use crate::foundations::max_abs;
    use nalgebra::DMatrix;

    fn ml_setup() -> (LinearStructure, ThetaVector, DVector<f64>) {
        let st = LinearStructure::unstructured(2).unwrap();
        let sigma =
            crate::foundations::SymMatrix::from_row_slice(2, &[2.0, 0.6, 0.6, 1.0]).unwrap();
        let theta = st.coordinates(&sigma).unwrap();
        (st, theta, DVector::from_vec(vec![0.5, -1.0]))
    }

    #[test]
    fn biweight_weights_beyond_cutoff() {
        let c = 2.661;
        let w = InfluenceWeights::biweight(2, c).unwrap();
        let law = SphericalLaw::gaussian(2).unwrap();
        let b0 = consistency_constant(&Biweight::new(c).unwrap(), &law).unwrap();
        for s in [c, c + 0.1, 3.0 * c] {
            assert_eq!(w.alpha_c(s), 0.0);
            let expected = -2.0 * (c * c / 6.0 - b0) / w.delta2;
            assert!((w.beta_c(s) - expected).abs() < 1e-14);
        }
        assert!((w.beta_c(0.0) - 2.0 * b0 / w.delta2).abs() < 1e-14);
        assert!((w.alpha_c(0.0) - 2.0 / w.delta1).abs() < 1e-14);
    }

    #[test]
    fn gamma_c_has_zero_mean() {
        for (k, c) in [(2, 2.661), (3, 4.0), (5, 5.0)] {
            let w = InfluenceWeights::biweight(k, c).unwrap();
            let law = SphericalLaw::gaussian(k).unwrap();
            let m = law.expect(|r| w.gamma_c(r), &w.kinks()).unwrap();
            assert!(m.abs() < 1e-10, "k={k} mean {m}");
        }
        let w = InfluenceWeights::gaussian_ml(3);
        let law = SphericalLaw::gaussian(3).unwrap();
        assert!(law.expect(|r| w.gamma_c(r), &[]).unwrap().abs() < 1e-10);
    }

    #[test]
    fn quadratic_rho_reproduces_gaussian_ml_weights() {
        let k = 3;
        let law = SphericalLaw::gaussian(k).unwrap();
        let w = InfluenceWeights::s_rho(Arc::new(QuadraticRho), &law, 1.5).unwrap();
        for s in [0.0, 0.7, 2.0, 5.0] {
            assert!((w.alpha_c(s) - 1.0).abs() < 1e-10);
            assert!((w.beta_c(s) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn point_at_center() {
        let (st, theta, mu) = ml_setup();
        let w = InfluenceWeights::biweight(2, 3.0).unwrap();
        let out = if_structured(&mu, &mu, &st, &theta, &w).unwrap();
        let sigma = st.evaluate(&theta).unwrap();
        let expected = sigma.vec() * (-w.beta_c(0.0));
        assert!((out.if_vec_m - expected).norm() < 1e-12);
    }

    #[test]
    fn unstructured_reduces_to_outer_product_form() {
        let (st, theta, mu) = ml_setup();
        let sigma = st.evaluate(&theta).unwrap();
        let w = InfluenceWeights::biweight(2, 3.0).unwrap();
        for y in [[1.0, 2.0], [-0.3, 0.1], [4.0, -3.0]] {
            let y = DVector::from_vec(y.to_vec());
            let out = if_structured(&y, &mu, &st, &theta, &w).unwrap();
            let r = &y - &mu;
            let d = out.distance;
            let direct = &r * r.transpose() * w.alpha_c(d) - sigma.matrix() * w.beta_c(d);
            assert!((&out.if_vec_m - vec(&direct)).norm() < 1e-10);
            assert_eq!(st.stacked() * &out.if_theta, out.if_vec_m);
        }
    }

    #[test]
    fn shape_influence_is_trace_free_and_redescending() {
        let st = LinearStructure::compound_symmetry(3).unwrap();
        let theta = ThetaVector::new(&[1.0, 0.4]);
        let sigma = st.evaluate_pds(&theta).unwrap();
        let c = 3.5;
        let w = InfluenceWeights::biweight(3, c).unwrap();
        let mu = DVector::zeros(3);
        for y in [[0.5, 0.1, -0.2], [1.0, 2.0, 0.3], [10.0, -4.0, 2.0]] {
            let y = DVector::from_vec(y.to_vec());
            let ifs = if_homogeneous(&y, &mu, &st, &theta, &w, HomogeneousTarget::Shape).unwrap();
            let m = DMatrix::from_column_slice(3, 3, ifs.as_slice());
            assert!((sigma.inverse() * m).trace().abs() < 1e-10);
            if sigma.mahalanobis_sq(&y).sqrt() >= c {
                assert!(ifs.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_influence_norm_scales_with_alpha_d2() {
        let st = LinearStructure::compound_symmetry(3).unwrap();
        let theta = ThetaVector::new(&[1.0, 0.4]);
        let sigma = st.evaluate_pds(&theta).unwrap();
        let w = InfluenceWeights::biweight(3, 4.0).unwrap();
        let mu = DVector::zeros(3);
        for dir in [[1.0, 0.0, 0.0], [0.3, -1.0, 0.5], [1.0, 1.0, 1.0]] {
            let dir = DVector::from_vec(dir.to_vec());
            let ratios: Vec<f64> = [0.5, 1.2, 2.0]
                .iter()
                .map(|&t| {
                    let y = &dir * t;
                    let d = sigma.mahalanobis_sq(&y).sqrt();
                    let ifs =
                        if_homogeneous(&y, &mu, &st, &theta, &w, HomogeneousTarget::Shape).unwrap();
                    ifs.norm() / (w.alpha_c(d).abs() * d * d)
                })
                .collect();
            assert!((ratios[0] - ratios[1]).abs() < 1e-10 * ratios[0]);
            assert!((ratios[0] - ratios[2]).abs() < 1e-10 * ratios[0]);
        }
    }

    #[test]
    fn scale_influence_matches_chain_rule() {
        let st = LinearStructure::compound_symmetry(3).unwrap();
        let theta = ThetaVector::new(&[1.5, 0.2]);
        let sigma = st.evaluate_pds(&theta).unwrap();
        let w = InfluenceWeights::biweight(3, 4.0).unwrap();
        let mu = DVector::zeros(3);
        let y = DVector::from_vec(vec![0.7, -1.1, 0.4]);
        let base = if_structured(&y, &mu, &st, &theta, &w).unwrap();
        let g = crate::asymptotics::scale_gradient(&sigma);
        let via_chain = (g * &base.if_vec_m)[(0, 0)];
        let sc = if_homogeneous(&y, &mu, &st, &theta, &w, HomogeneousTarget::Scale).unwrap();
        assert!((sc[0] - via_chain).abs() < 1e-12 * (1.0 + via_chain.abs()));
    }

    #[test]
    fn direction_influences_annihilate_theta_direction() {
        let st = LinearStructure::compound_symmetry(3).unwrap();
        let theta = ThetaVector::new(&[1.5, 0.2]);
        let w = InfluenceWeights::gaussian_ml(3);
        let mu = DVector::zeros(3);
        let y = DVector::from_vec(vec![0.7, -1.1, 0.4]);
        let d = if_homogeneous(&y, &mu, &st, &theta, &w, HomogeneousTarget::Direction).unwrap();
        assert!(d.dot(&theta.0).abs() < 1e-12);
        let dd = if_homogeneous(&y, &mu, &st, &theta, &w, HomogeneousTarget::DirectionDet).unwrap();
        assert_eq!(dd.len(), 2);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (st, theta, mu) = ml_setup();
        let w = InfluenceWeights::gaussian_ml(3);
        assert!(if_structured(&mu, &mu, &st, &theta, &w).is_err());
    }

    #[test]
    fn ges_closed_form_suprema_match_grid() {
        for (k, c) in [(2, 2.661), (2, 4.115), (5, 5.0)] {
            let g = ges_indices(k, c).unwrap();
            let s = biweight_scalars(k, c).unwrap();
            let rho = Biweight::new(c).unwrap();
            let n = 100_000;
            let (mut m1, mut m2, mut m3) = (0.0_f64, 0.0_f64, 0.0_f64);
            for i in 0..=n {
                let t = 3.0 * c * i as f64 / n as f64;
                m1 = m1.max(rho.drho(t).abs());
                m2 = m2.max((rho.drho(t) * t).abs());
                m3 = m3.max((rho.rho(t) - s.b0).abs());
            }
            let kf = k as f64;
            assert!((g.g1 - m1 / s.alpha).abs() < 1e-8 * g.g1);
            assert!((g.g2 - kf * m2 / ((kf + 2.0) * s.delta1)).abs() < 1e-8 * g.g2);
            assert!((g.g3 - 2.0 * m3 / s.delta2).abs() < 1e-8 * g.g3);
            assert!(g.g1 > 0.0 && g.g2 > 0.0 && g.g3 > 0.0);
        }
    }

    #[test]
    fn g3_is_sup_of_gamma_c() {
        let (k, c) = (2, 4.115);
        let g = ges_indices(k, c).unwrap();
        let w = InfluenceWeights::biweight(k, c).unwrap();
        let m = (0..=100_000)
            .map(|i| w.gamma_c(3.0 * c * i as f64 / 100_000.0).abs())
            .fold(0.0_f64, f64::max);
        assert!((g.g3 - m).abs() < 1e-8 * m);
    }

    #[test]
    fn g1_has_interior_minimum() {
        for k in [2, 5, 10] {
            let grid: Vec<f64> = (1..=10).map(|i| 0.05 * i as f64).collect();
            let rows = tradeoff_curve(&[k], &grid).unwrap();
            let g1: Vec<f64> = rows.iter().map(|r| r.g1).collect();
            let (imin, _) = g1
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap();
            assert!(imin > 0 && imin < g1.len() - 1, "k={k} argmin at {imin}");
        }
    }

    #[test]
    fn tradeoff_curve_is_ordered_and_deterministic() {
        let grid = [0.1, 0.3, 0.5];
        let a = tradeoff_curve(&[2, 5], &grid).unwrap();
        let b = tradeoff_curve(&[2, 5], &grid).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert_eq!((a[0].k, a[0].breakdown), (2, 0.1));
        assert_eq!((a[5].k, a[5].breakdown), (5, 0.5));
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = golden_section(0.0, 1.0, 1e-9, |x| Ok((x - 0.3) * (x - 0.3))).unwrap();
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn perturbation_limit_matches_formula_for_ml_mean_model() {
        // ML functional at the mixture (1-h)N(mu, S) + h delta_y has closed-form
        // moments; its derivative in h at 0 is the influence function
        let (st, theta, mu) = ml_setup();
        let sigma = st.evaluate(&theta).unwrap().into_matrix();
        let w = InfluenceWeights::gaussian_ml(2);
        let y = DVector::from_vec(vec![1.5, 0.25]);
        let cov_at = |h: f64| {
            let m = &mu * (1.0 - h) + &y * h;
            let a = &mu - &m;
            let b = &y - &m;
            (&sigma + &a * a.transpose()) * (1.0 - h) + &b * b.transpose() * h
        };
        let h = 1e-5;
        let fd = (cov_at(h) - &sigma) / h;
        let out = if_structured(&y, &mu, &st, &theta, &w).unwrap();
        assert!(max_abs(&(fd - DMatrix::from_column_slice(2, 2, out.if_vec_m.as_slice()))) < 1e-4);
    }
}

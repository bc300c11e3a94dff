//! rho-functions and the `(w1, w2, w3)` weight triples that define the
//! estimating equations, plus the radial companions `(v1, v2)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bounded rho-function with cutoff `c`.
pub trait RhoFunction: Send + Sync + fmt::Debug {
    fn cutoff(&self) -> f64;
    fn rho(&self, s: f64) -> f64;
    fn drho(&self, s: f64) -> f64;
    fn ddrho(&self, s: f64) -> f64;
    /// `sup_s rho(s)`.
    fn sup_rho(&self) -> f64;

    /// `rho'(s)/s` with its limit `rho''(0)` at zero.
    fn drho_over_s(&self, s: f64) -> f64 {
        if s == 0.0 {
            self.ddrho(0.0)
        } else {
            self.drho(s) / s
        }
    }

    /// Derivative of `rho'(s)/s`, i.e. `(rho''(s) s - rho'(s)) / s^2`.
    fn d_drho_over_s(&self, s: f64) -> f64 {
        if s == 0.0 {
            0.0
        } else {
            (self.ddrho(s) * s - self.drho(s)) / (s * s)
        }
    }

    /// Radii where the function is not smooth.
    fn kinks(&self) -> Vec<f64> {
        vec![self.cutoff()]
    }
}

/// Tukey's biweight:
/// `rho(s) = s^2/2 - s^4/(2c^2) + s^6/(6c^4)` for `|s| <= c`, `c^2/6` beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biweight {
    c: f64,
}

impl Biweight {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cutoff must be > 0, got {c}"
            )));
        }
        Ok(Self { c })
    }

    /// `sup_s |rho'(s)| = 16 c / (25 sqrt 5)`, attained at `c / sqrt 5`.
    pub fn sup_abs_drho(&self) -> f64 {
        16.0 * self.c / (25.0 * 5f64.sqrt())
    }

    /// `sup_s |rho'(s) s| = 4 c^2 / 27`, attained at `c / sqrt 3`.
    pub fn sup_abs_drho_s(&self) -> f64 {
        4.0 * self.c * self.c / 27.0
    }
}

impl RhoFunction for Biweight {
    fn cutoff(&self) -> f64 {
        self.c
    }

    fn rho(&self, s: f64) -> f64 {
        let s = s.abs();
        if s > self.c {
            return self.sup_rho();
        }
        let u = (s / self.c).powi(2);
        // s^2/2 - s^4/(2c^2) + s^6/(6c^4) = s^2/2 (1 - u + u^2/3)
        0.5 * s * s * (1.0 - u + u * u / 3.0)
    }

    fn drho(&self, s: f64) -> f64 {
        if s.abs() > self.c {
            return 0.0;
        }
        let u = 1.0 - (s / self.c).powi(2);
        s * u * u
    }

    /// Left limit at `s == c` (where it is 0 either way).
    fn ddrho(&self, s: f64) -> f64 {
        if s.abs() > self.c {
            return 0.0;
        }
        let u = (s / self.c).powi(2);
        (1.0 - u) * (1.0 - 5.0 * u)
    }

    fn sup_rho(&self) -> f64 {
        self.c * self.c / 6.0
    }

    fn drho_over_s(&self, s: f64) -> f64 {
        if s.abs() > self.c {
            return 0.0;
        }
        let u = 1.0 - (s / self.c).powi(2);
        u * u
    }

    fn d_drho_over_s(&self, s: f64) -> f64 {
        if s.abs() > self.c {
            return 0.0;
        }
        let c2 = self.c * self.c;
        -4.0 * s * (1.0 - s * s / c2) / c2
    }
}

/// Estimator family of a weight triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    GaussianMl,
    MEstimator,
    SRho,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::GaussianMl => "gaussian-ml",
            Family::MEstimator => "m-estimator",
            Family::SRho => "s-rho",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-ml" | "ml" => Ok(Family::GaussianMl),
            "m-estimator" => Ok(Family::MEstimator),
            "s-rho" | "s" => Ok(Family::SRho),
            other => Err(Error::InvalidArgument(format!("unknown family '{other}'"))),
        }
    }
}

/// User-supplied weights for the m-estimator family. Derivative correctness
/// is the implementor's contract; see [`WeightTriple::derivative_check`].
pub trait WeightFunctions: Send + Sync {
    fn w1(&self, s: f64) -> f64;
    fn w2(&self, s: f64) -> f64;
    fn w3(&self, s: f64) -> f64;
    fn dw2(&self, s: f64) -> f64;
    fn dw3(&self, s: f64) -> f64;
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Clone)]
enum Inner {
    Unit,
    Custom(Arc<dyn WeightFunctions>),
    Rho { rho: Arc<dyn RhoFunction>, b0: f64 },
}

/// The weight functions `(w1, w2, w3)` and derivatives `w2'`, `w3'`.
#[derive(Clone)]
pub struct WeightTriple {
    family: Family,
    dim: usize,
    inner: Inner,
}

impl fmt::Debug for WeightTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("WeightTriple");
        d.field("family", &self.family).field("dim", &self.dim);
        if let Inner::Rho { rho, b0 } = &self.inner {
            d.field("rho", rho).field("b0", b0);
        }
        d.finish()
    }
}

impl WeightTriple {
    /// `w1 = w2 = w3 = 1`.
    pub fn gaussian_ml(dim: usize) -> Self {
        Self {
            family: Family::GaussianMl,
            dim,
            inner: Inner::Unit,
        }
    }

    pub fn m_estimator(dim: usize, weights: Arc<dyn WeightFunctions>) -> Self {
        Self {
            family: Family::MEstimator,
            dim,
            inner: Inner::Custom(weights),
        }
    }

    /// `w1 = rho'(s)/s`, `w2 = k rho'(s)/s`, `w3 = rho'(s) s - rho(s) + b0`.
    pub fn s_rho(rho: Arc<dyn RhoFunction>, dim: usize, b0: Option<f64>) -> Result<Self> {
        let b0 = b0.ok_or(Error::MissingConstant)?;
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        Ok(Self {
            family: Family::SRho,
            dim,
            inner: Inner::Rho { rho, b0 },
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho(&self) -> Option<&Arc<dyn RhoFunction>> {
        match &self.inner {
            Inner::Rho { rho, .. } => Some(rho),
            _ => None,
        }
    }

    pub fn b0(&self) -> Option<f64> {
        match &self.inner {
            Inner::Rho { b0, .. } => Some(*b0),
            _ => None,
        }
    }

    pub fn kinks(&self) -> Vec<f64> {
        match &self.inner {
            Inner::Unit => Vec::new(),
            Inner::Custom(w) => w.kinks(),
            Inner::Rho { rho, .. } => rho.kinks(),
        }
    }

    pub fn w1(&self, s: f64) -> f64 {
        match &self.inner {
            Inner::Unit => 1.0,
            Inner::Custom(w) => w.w1(s),
            Inner::Rho { rho, .. } => rho.drho_over_s(s),
        }
    }

    pub fn w2(&self, s: f64) -> f64 {
        match &self.inner {
            Inner::Unit => 1.0,
            Inner::Custom(w) => w.w2(s),
            Inner::Rho { rho, .. } => self.dim as f64 * rho.drho_over_s(s),
        }
    }

    pub fn w3(&self, s: f64) -> f64 {
        match &self.inner {
            Inner::Unit => 1.0,
            Inner::Custom(w) => w.w3(s),
            Inner::Rho { rho, b0 } => rho.drho(s) * s - rho.rho(s) + b0,
        }
    }

    pub fn dw2(&self, s: f64) -> f64 {
        match &self.inner {
            Inner::Unit => 0.0,
            Inner::Custom(w) => w.dw2(s),
            Inner::Rho { rho, .. } => self.dim as f64 * rho.d_drho_over_s(s),
        }
    }

    /// For s-rho: `d/ds (rho'(s) s - rho(s)) = rho''(s) s`.
    pub fn dw3(&self, s: f64) -> f64 {
        match &self.inner {
            Inner::Unit => 0.0,
            Inner::Custom(w) => w.dw3(s),
            Inner::Rho { rho, .. } => rho.ddrho(s) * s,
        }
    }

    /// Largest relative discrepancy between the declared derivatives and
    /// central differences over `points`, skipping points within `2h` of a
    /// declared kink.
    pub fn derivative_check(&self, points: &[f64]) -> f64 {
        let h = 1e-5;
        let kinks = self.kinks();
        let mut worst = 0.0_f64;
        for &s in points {
            if s < 2.0 * h || kinks.iter().any(|c| (s - c).abs() < 2.0 * h) {
                continue;
            }
            let fd2 = (self.w2(s + h) - self.w2(s - h)) / (2.0 * h);
            let fd3 = (self.w3(s + h) - self.w3(s - h)) / (2.0 * h);
            let e2 = (fd2 - self.dw2(s)).abs() / (1.0 + fd2.abs());
            let e3 = (fd3 - self.dw3(s)).abs() / (1.0 + fd3.abs());
            worst = worst.max(e2).max(e3);
        }
        worst
    }
}

/// Nondegeneracy of the limiting variances: `|g1|` and `|g1 - k g2|` must exceed
/// `1e-10 (1 + |g1|)`.
pub fn check_gamma_nondegeneracy(gamma1: f64, gamma2: f64, k: usize) -> Result<()> {
    let scale = 1e-10 * (1.0 + gamma1.abs());
    if !(gamma1.abs() >= scale) {
        return Err(Error::DegenerateGammas(format!("gamma1 = {gamma1:e}")));
    }
    let second = gamma1 - k as f64 * gamma2;
    if !(second.abs() >= scale) {
        return Err(Error::DegenerateGammas(format!(
            "gamma1 - k gamma2 = {second:e}"
        )));
    }
    Ok(())
}

/// `v1(s) = w2(s)/g1`, `v2(s) = (-g2 w2(s) s^2 + g1 w3(s)) / (g1 (g1 - k g2))`.
#[derive(Debug, Clone)]
pub struct RadialCompanions {
    triple: WeightTriple,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl RadialCompanions {
    pub fn new(triple: &WeightTriple, gamma1: f64, gamma2: f64) -> Result<Self> {
        check_gamma_nondegeneracy(gamma1, gamma2, triple.dim())?;
        Ok(Self {
            triple: triple.clone(),
            gamma1,
            gamma2,
        })
    }

    pub fn v1(&self, s: f64) -> f64 {
        self.triple.w2(s) / self.gamma1
    }

    pub fn v2(&self, s: f64) -> f64 {
        let (g1, g2) = (self.gamma1, self.gamma2);
        let k = self.triple.dim() as f64;
        (-g2 * self.triple.w2(s) * s * s + g1 * self.triple.w3(s)) / (g1 * (g1 - k * g2))
    }
}

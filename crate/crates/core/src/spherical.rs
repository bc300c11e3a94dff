//! Expectations `E[z(||z||)]` under spherical laws, reduced to a single
//! radial integral
//!
//! ```text
//! E[z(||z||)] = 2 pi^{k/2} / Gamma(k/2) * int_0^inf z(r) g(r^2) r^{k-1} dr
//! ```
//!
//! and evaluated by adaptive Gauss-Legendre quadrature. Panels are split at
//! declared kinks of the integrand and the tail is truncated where the
//! radial density drops below `1e-16` of its maximum.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const GL_ORDER: usize = 20;
const MAX_DEPTH: usize = 40;
const TAIL_LOG_RATIO: f64 = -36.841_361_487_904_734; // ln(1e-16)
const BASE_PANELS: usize = 8;

/// Density generator `g` of an elliptical law, given on the log scale so
/// that large dimensions do not underflow.
pub trait DensityGenerator: Send + Sync {
    /// `ln g(t)` for `t >= 0`.
    fn log_g(&self, t: f64) -> f64;

    fn is_gaussian(&self) -> bool {
        false
    }
}

/// Standard normal generator `g(t) = (2 pi)^{-k/2} exp(-t/2)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianGenerator {
    pub dim: usize,
}

impl DensityGenerator for GaussianGenerator {
    fn log_g(&self, t: f64) -> f64 {
        -0.5 * self.dim as f64 * (2.0 * PI).ln() - 0.5 * t
    }

    fn is_gaussian(&self) -> bool {
        true
    }
}

/// A spherical law on `R^k`, described by its density generator.
#[derive(Clone)]
pub struct SphericalLaw {
    dim: usize,
    generator: Arc<dyn DensityGenerator>,
    log_const: f64,
    r_max: f64,
}

impl std::fmt::Debug for SphericalLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SphericalLaw")
            .field("dim", &self.dim)
            .field("gaussian", &self.generator.is_gaussian())
            .field("r_max", &self.r_max)
            .finish()
    }
}

impl SphericalLaw {
    pub fn gaussian(dim: usize) -> Result<Self> {
        Self::new(dim, Arc::new(GaussianGenerator { dim }))
    }

    /// Builds the law and checks that the radial density integrates to one
    /// within `1e-10`.
    pub fn new(dim: usize, generator: Arc<dyn DensityGenerator>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        let k = dim as f64;
        let log_const = std::f64::consts::LN_2 + 0.5 * k * PI.ln() - ln_gamma(0.5 * k);
        let mut law = Self {
            dim,
            generator,
            log_const,
            r_max: 0.0,
        };
        law.locate_support()?;
        let mass = law.expect(|_| 1.0, &[])?;
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "radial density integrates to {mass}, not 1"
            )));
        }
        Ok(law)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_gaussian(&self) -> bool {
        self.generator.is_gaussian()
    }

    /// Truncation radius of the tail.
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `ln f(r)` of the radial density `f(r) = c_k g(r^2) r^{k-1}`.
    pub fn log_radial_density(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return if self.dim == 1 {
                self.log_const + self.generator.log_g(0.0)
            } else {
                f64::NEG_INFINITY
            };
        }
        self.log_const + self.generator.log_g(r * r) + (self.dim as f64 - 1.0) * r.ln()
    }

    pub fn radial_density(&self, r: f64) -> f64 {
        self.log_radial_density(r).exp()
    }

    fn locate_support(&mut self) -> Result<()> {
        // coarse scan for the mode, then walk outward until the density is
        // negligible relative to it
        let mut log_mode = f64::NEG_INFINITY;
        let mut r = 0.0;
        let step = 0.01;
        let mut last_above = 0.0;
        while r < 1e4 {
            let lf = self.log_radial_density(r);
            if lf > log_mode {
                log_mode = lf;
            }
            if lf >= log_mode + TAIL_LOG_RATIO {
                last_above = r;
            } else if r > 2.0 * last_above + 1.0 {
                break;
            }
            r += step * (1.0 + r);
        }
        if !log_mode.is_finite() || r >= 1e4 {
            return Err(Error::QuadratureFailure(
                "radial density has no negligible tail below r = 1e4".into(),
            ));
        }
        // refine the crossing point by bisection between last_above and r
        let (mut lo, mut hi) = (last_above, r);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.log_radial_density(mid) >= log_mode + TAIL_LOG_RATIO {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.r_max = hi;
        Ok(())
    }

    /// `E[z(||z||)]`. `kinks` lists radii where `z` is not smooth; panels
    /// are split there so no node falls on a kink.
    pub fn expect<F>(&self, z: F, kinks: &[f64]) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        let r_max = self.r_max;
        let integrand = |r: f64| z(r) * self.radial_density(r);

        let mut breaks: Vec<f64> = (0..=BASE_PANELS)
            .map(|i| r_max * i as f64 / BASE_PANELS as f64)
            .collect();
        breaks.extend(kinks.iter().cloned().filter(|&c| c > 0.0 && c < r_max));
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * r_max);

        let mut total = 0.0;
        for w in breaks.windows(2) {
            total += adaptive(&integrand, w[0], w[1], 1e-14, 0)?;
        }
        if !total.is_finite() {
            return Err(Error::QuadratureFailure("integral is not finite".into()));
        }

        // the integrand at the truncation radius must be negligible
        let edge = integrand(r_max).abs() * r_max;
        if !edge.is_finite() || edge > 1e-10 * (1.0 + total.abs()) {
            return Err(Error::QuadratureFailure(format!(
                "integrand grows too fast: |z(r) f(r)| r = {edge:e} at truncation radius {r_max:.3}"
            )));
        }
        Ok(total)
    }

    /// `n` i.i.d. draws, deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        self.sample_stream(n, seed, 0)
    }

    /// Draws from the independent stream `(seed, stream)`.
    pub fn sample_stream(&self, n: usize, seed: u64, stream: u64) -> Result<Vec<DVector<f64>>> {
        if !self.is_gaussian() {
            return Err(Error::UnsupportedSampler);
        }
        let mut rng = stream_rng(seed, stream);
        Ok((0..n)
            .map(|_| DVector::from_fn(self.dim, |_, _| StandardNormal.sample(&mut rng)))
            .collect())
    }
}

/// Deterministic random stream for a `(seed, stream index)` pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
    let (whole, _) = gauss_legendre(f, a, b);
    let mid = 0.5 * (a + b);
    let (left, abs_left) = gauss_legendre(f, a, mid);
    let (right, abs_right) = gauss_legendre(f, mid, b);
    let halves = left + right;
    // below this the difference is rounding noise
    let noise = 64.0 * f64::EPSILON * (abs_left + abs_right);
    if (halves - whole).abs() <= tol.max(noise) {
        return Ok(halves);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::QuadratureFailure(format!(
            "no convergence on [{a}, {b}] after {MAX_DEPTH} bisections"
        )));
    }
    Ok(adaptive(f, a, mid, 0.5 * tol, depth + 1)? + adaptive(f, mid, b, 0.5 * tol, depth + 1)?)
}

/// Integral over `[a, b]` and the integral of its absolute value.
fn gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let (nodes, weights) = gl_rule();
    let half = 0.5 * (b - a);
    let center = 0.5 * (a + b);
    let (mut sum, mut abs) = (0.0, 0.0);
    for (x, w) in nodes.iter().zip(weights) {
        let v = w * f(center + half * x);
        sum += v;
        abs += v.abs();
    }
    (sum * half, abs * half.abs())
}

/// Nodes and weights of the `GL_ORDER`-point Gauss-Legendre rule on
/// `[-1, 1]`, from Newton iteration on the Legendre recurrence.
fn gl_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        (nodes, weights)
    })
}

/// `(P_n(x), P_n'(x))`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

//! Synthetic-data posterior over the parameter box, local reparameterisation
//! `u = √n (q - q0)`, the exact and linearised log-likelihood ratios, and the
//! Gaussian approximation `N(q0 + Δ_n/√n, Σ/n)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::forward::Bounds;
use crate::gaussian::MvNormal;
use crate::model::{check_len, ForwardMap};
use crate::stats::{dot, norm, rng_from_seed, standard_normal_vec};

/// Condition number of `∇G(q0)` above which the Gaussian approximation is refused.
pub const MAX_JACOBIAN_CONDITION: f64 = 1e12;

/// Unnormalised log density on a (possibly bounded) parameter space.
pub trait LogTarget: Sync {
    fn dim(&self) -> usize;

    /// `-inf` outside the support.
    fn log_density(&self, q: &[f64]) -> f64;

    /// Box support, `None` for all of `R^d`.
    fn bounds(&self) -> Option<Bounds>;
}

/// A Gaussian seen as an (unnormalised) target on `R^d`, scaled by `exp(log_scale)`.
pub struct GaussianTarget<'a> {
    pub normal: &'a MvNormal,
    pub log_scale: f64,
}

impl LogTarget for GaussianTarget<'_> {
    fn dim(&self) -> usize {
        self.normal.dim()
    }
    fn log_density(&self, q: &[f64]) -> f64 {
        self.normal.log_pdf(q) + self.log_scale
    }
    fn bounds(&self) -> Option<Bounds> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorKind {
    Uniform,
    /// Normal with the given location and scale, truncated to the bounds.
    TruncatedNormal { mean: f64, std: f64 },
}

/// Product prior with identical one-dimensional factors on `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub bounds: Bounds,
    pub d: usize,
}

impl PriorSpec {
    pub fn uniform(bounds: Bounds, d: usize) -> Self {
        Self {
            kind: PriorKind::Uniform,
            bounds,
            d,
        }
    }

    /// Mean at the midpoint, standard deviation a quarter of the width.
    pub fn truncated_normal(bounds: Bounds, d: usize) -> Self {
        Self {
            kind: PriorKind::TruncatedNormal {
                mean: bounds.midpoint(),
                std: bounds.width() / 4.0,
            },
            bounds,
            d,
        }
    }

    /// Log density of one factor; `-inf` outside the bounds.
    pub fn component_log_density(&self, x: f64) -> f64 {
        if !self.bounds.contains(x) {
            return f64::NEG_INFINITY;
        }
        match self.kind {
            PriorKind::Uniform => -self.bounds.width().ln(),
            PriorKind::TruncatedNormal { mean, std } => {
                let n = Normal::new(mean, std).expect("positive prior scale");
                let mass = n.cdf(self.bounds.upper) - n.cdf(self.bounds.lower);
                let z = (x - mean) / std;
                -0.5 * z * z - (std * (2.0 * std::f64::consts::PI).sqrt()).ln() - mass.ln()
            }
        }
    }

    pub fn log_density(&self, q: &[f64]) -> f64 {
        if q.len() != self.d {
            return f64::NEG_INFINITY;
        }
        match self.kind {
            PriorKind::Uniform if self.bounds.contains_all(q) => {
                -(self.d as f64) * self.bounds.width().ln()
            }
            _ => q.iter().map(|&x| self.component_log_density(x)).sum(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.d)
            .map(|_| match self.kind {
                PriorKind::Uniform => rng.random_range(self.bounds.lower..=self.bounds.upper),
                PriorKind::TruncatedNormal { mean, std } => loop {
                    let x = mean + std * rng.sample::<f64, _>(rand_distr::StandardNormal);
                    if self.bounds.contains(x) {
                        break x;
                    }
                },
            })
            .collect()
    }

    /// Oscillation and local Lipschitz constant of one factor's log density,
    /// measured on `points` equispaced nodes over the bounds.
    pub fn regularity(&self, points: usize) -> PriorRegularity {
        let xs: Vec<f64> = (0..points)
            .map(|k| self.bounds.lower + self.bounds.width() * k as f64 / (points - 1) as f64)
            .collect();
        let lp: Vec<f64> = xs.iter().map(|&x| self.component_log_density(x)).collect();
        let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = lp.iter().copied().fold(f64::INFINITY, f64::min);
        let lipschitz = lp
            .windows(2)
            .zip(xs.windows(2))
            .map(|(l, x)| (l[1] - l[0]).abs() / (x[1] - x[0]))
            .fold(0.0, f64::max);
        PriorRegularity {
            oscillation: max - min,
            lipschitz,
            strictly_positive: lp.iter().all(|v| v.is_finite()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorRegularity {
    /// `max - min` of the log density over the support.
    pub oscillation: f64,
    pub lipschitz: f64,
    pub strictly_positive: bool,
}

/// `K(d) = K σ(d) sqrt(d (ln d + ln σ(d)))`.
pub fn k_radius(d: usize, k: f64, sigma: impl Fn(usize) -> f64) -> f64 {
    let s = sigma(d);
    let df = d as f64;
    k * s * (df * (df.ln() + s.ln())).max(0.0).sqrt()
}

/// Ill-posedness growth of the medium problem, `σ(d) = d`.
pub fn medium_sigma(d: usize) -> f64 {
    d as f64
}

/// [`k_radius`] with `σ(d) = d`.
pub fn k_of_d(d: usize, k: f64) -> f64 {
    k_radius(d, k, medium_sigma)
}

/// Observation model `Y = G(q0) + η/√n` together with its prior.
#[derive(Debug, Clone)]
pub struct PosteriorSpec<G> {
    pub model: G,
    pub prior: PriorSpec,
    pub y: DVector<f64>,
    /// Noise parameter; the noise standard deviation is `n^-1/2`.
    pub n: f64,
    pub q0: Vec<f64>,
    pub eta: Vec<f64>,
}

impl<G: ForwardMap> PosteriorSpec<G> {
    /// Draws `η ~ N(0, I)` and sets `Y = G(q0) + η/√n`.
    pub fn synthesize(model: G, prior: PriorSpec, q0: Vec<f64>, n: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let eta = standard_normal_vec(&mut rng, model.dim());
        Self::with_noise(model, prior, q0, eta, n)
    }

    /// Builds the observation from an explicit noise realisation.
    pub fn with_noise(model: G, prior: PriorSpec, q0: Vec<f64>, eta: Vec<f64>, n: f64) -> Result<Self> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument(format!("noise parameter must be positive, got {n}")));
        }
        let d = model.dim();
        check_len(d, &q0)?;
        check_len(d, &eta)?;
        if prior.d != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: prior.d,
            });
        }
        prior.bounds.check(&q0)?;
        if !prior.bounds.strictly_contains_all(&q0) {
            log::warn!("truth lies on the boundary of the parameter box");
        }
        let g0 = model.forward(&q0)?;
        let scale = n.sqrt().recip();
        let y = g0 + DVector::from_column_slice(&eta) * scale;
        Ok(Self {
            model,
            prior,
            y,
            n,
            q0,
            eta,
        })
    }

    /// Posterior with a given observation and arbitrary likelihood weight
    /// `n >= 0`; `n = 0` leaves only the prior.
    pub fn from_observation(
        model: G,
        prior: PriorSpec,
        q0: Vec<f64>,
        eta: Vec<f64>,
        y: DVector<f64>,
        n: f64,
    ) -> Result<Self> {
        if !(n >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise parameter must be >= 0, got {n}")));
        }
        let d = model.dim();
        check_len(d, &q0)?;
        check_len(d, &eta)?;
        check_len(d, y.as_slice())?;
        Ok(Self {
            model,
            prior,
            y,
            n,
            q0,
            eta,
        })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn bounds(&self) -> Bounds {
        self.prior.bounds
    }

    /// `-(n/2)|Y - G(q)|^2 + log π(q)`, `-inf` outside the box.
    pub fn log_posterior_unnorm(&self, q: &[f64]) -> f64 {
        let lp = self.prior.log_density(q);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        if self.n == 0.0 {
            return lp;
        }
        match self.model.forward(q) {
            Ok(g) => -0.5 * self.n * (&self.y - g).norm_squared() + lp,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn to_original(&self, u: &[f64]) -> Vec<f64> {
        let s = self.n.sqrt().recip();
        self.q0.iter().zip(u).map(|(q, v)| q + s * v).collect()
    }

    pub fn to_local(&self, q: &[f64]) -> Vec<f64> {
        let s = self.n.sqrt();
        q.iter().zip(&self.q0).map(|(a, b)| s * (a - b)).collect()
    }

    /// `L_n(u) = <η, T> - |T|^2 / 2` with `T = √n (G(q0 + u/√n) - G(q0))`.
    pub fn log_l_n(&self, u: &[f64]) -> Result<f64> {
        check_len(self.dim(), u)?;
        let q = self.to_original(u);
        if !self.bounds().contains_all(&q) {
            return Err(Error::Domain("q0 + u/sqrt(n) leaves the parameter box".into()));
        }
        let t = (self.model.forward(&q)? - self.model.forward(&self.q0)?) * self.n.sqrt();
        Ok(dot(&self.eta, t.as_slice()) - 0.5 * t.norm_squared())
    }

    /// The linearised exponent `2<u, Σ^-1 Δ_n> - |Σ^-1/2 u|^2`.
    ///
    /// This is twice the Gaussian exponent `<u, Σ^-1 Δ_n> - |Σ^-1/2 u|^2 / 2`,
    /// so `exp` of it is proportional to `N(Δ_n, Σ/2)`; see
    /// [`PosteriorSpec::log_l_tilde_gaussian`] for the `N(Δ_n, Σ)` exponent.
    pub fn log_l_tilde(&self, approx: &GaussianApprox, u: &[f64]) -> f64 {
        let uv = DVector::from_column_slice(u);
        let prec_delta = &approx.precision * &approx.delta_n;
        2.0 * uv.dot(&prec_delta) - uv.dot(&(&approx.precision * &uv))
    }

    /// Same quantity written through the noise: `2<η, ∇G u> - |∇G u|^2`.
    pub fn log_l_tilde_via_noise(&self, approx: &GaussianApprox, u: &[f64]) -> f64 {
        let ju = &approx.jacobian * DVector::from_column_slice(u);
        2.0 * dot(&self.eta, ju.as_slice()) - ju.norm_squared()
    }

    /// `<η, ∇G u> - |∇G u|^2 / 2`, the exponent of `N(Δ_n, Σ)` up to a constant.
    pub fn log_l_tilde_gaussian(&self, approx: &GaussianApprox, u: &[f64]) -> f64 {
        0.5 * self.log_l_tilde(approx, u)
    }

    pub fn gaussian_approx(&self) -> Result<GaussianApprox> {
        let jac = self.model.jacobian(&self.q0)?;
        GaussianApprox::from_jacobian(jac, &self.eta, &self.q0, self.n)
    }
}

impl<G: ForwardMap> LogTarget for PosteriorSpec<G> {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn log_density(&self, q: &[f64]) -> f64 {
        self.log_posterior_unnorm(q)
    }
    fn bounds(&self) -> Option<Bounds> {
        Some(self.prior.bounds)
    }
}

/// `Σ = (∇G^T ∇G)^-1`, `Δ_n = Σ ∇G^T η`, and the normal `N(q0 + Δ_n/√n, Σ/n)`.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub jacobian: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// `Σ^-1 = ∇G^T ∇G`.
    pub precision: DMatrix<f64>,
    pub delta_n: DVector<f64>,
    pub center_orig: DVector<f64>,
    pub cov_orig: DMatrix<f64>,
    pub n: f64,
    local: MvNormal,
    original: MvNormal,
}

impl GaussianApprox {
    pub fn from_jacobian(jacobian: DMatrix<f64>, eta: &[f64], q0: &[f64], n: f64) -> Result<Self> {
        let d = jacobian.nrows();
        check_len(d, eta)?;
        check_len(d, q0)?;
        let sv = jacobian
            .clone()
            .try_svd(false, false, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Internal("SVD did not converge".into()))?
            .singular_values;
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        let cond = smax / smin;
        if !(cond <= MAX_JACOBIAN_CONDITION) {
            return Err(Error::IllConditioned(cond));
        }
        let jinv = jacobian
            .clone()
            .try_inverse()
            .ok_or(Error::IllConditioned(f64::INFINITY))?;
        let sigma = &jinv * jinv.transpose();
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let precision = jacobian.transpose() * &jacobian;
        let delta_n = &sigma * jacobian.transpose() * DVector::from_column_slice(eta);
        let center_orig = DVector::from_column_slice(q0) + &delta_n / n.sqrt();
        let cov_orig = &sigma / n;
        let local = MvNormal::new(delta_n.clone(), sigma.clone())?;
        let original = MvNormal::new(center_orig.clone(), cov_orig.clone())?;
        Ok(Self {
            jacobian,
            sigma,
            precision,
            delta_n,
            center_orig,
            cov_orig,
            n,
            local,
            original,
        })
    }

    pub fn dim(&self) -> usize {
        self.delta_n.len()
    }

    /// `N(Δ_n, Σ)` in local coordinates.
    pub fn local(&self) -> &MvNormal {
        &self.local
    }

    /// `N(q0 + Δ_n/√n, Σ/n)` in original coordinates.
    pub fn original(&self) -> &MvNormal {
        &self.original
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionGap {
    /// `max |L_n(u) - L̃_n(u)/2|` over the supplied points.
    pub max_gap: f64,
    /// `C (n^-1/2 |η| K(d)^2 + n^-1 K(d)^4)`.
    pub bound_rhs: f64,
    pub holds: bool,
    pub k_d: f64,
    pub eta_norm: f64,
}

/// Compares the exact log-likelihood ratio with its linearisation on points
/// of the local ball `|u| <= K(d)`.
///
/// The comparison uses the `N(Δ_n, Σ)` exponent (half of
/// [`PosteriorSpec::log_l_tilde`]), the quantity the exact ratio is
/// expanded against.
pub fn expansion_gap<G: ForwardMap>(
    spec: &PosteriorSpec<G>,
    approx: &GaussianApprox,
    u_samples: &[Vec<f64>],
    c: f64,
    k_d: f64,
) -> Result<ExpansionGap> {
    if u_samples.is_empty() {
        return Err(Error::InvalidArgument("expansion gap needs at least one point".into()));
    }
    let mut max_gap: f64 = 0.0;
    for u in u_samples {
        let exact = spec.log_l_n(u)?;
        let lin = spec.log_l_tilde_gaussian(approx, u);
        max_gap = max_gap.max((exact - lin).abs());
    }
    let eta_norm = norm(&spec.eta);
    let bound_rhs = c * (eta_norm * k_d * k_d / spec.n.sqrt() + k_d.powi(4) / spec.n);
    Ok(ExpansionGap {
        max_gap,
        bound_rhs,
        holds: max_gap <= bound_rhs,
        k_d,
        eta_norm,
    })
}

/// Constant for the expansion bound: twice the measured linearisation ratio.
pub fn calibrated_constant(a3_ratio: f64) -> f64 {
    2.0 * a3_ratio
}

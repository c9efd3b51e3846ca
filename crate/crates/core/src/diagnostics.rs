//! Distances between the posterior and its Gaussian approximation, credible
//! set coverage, and contraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::forward::Bounds;
use crate::gaussian::MvNormal;
use crate::model::ForwardMap;
use crate::posterior::{k_of_d, GaussianApprox, LogTarget, PosteriorSpec, PriorSpec};
use crate::quadform::gaussian_norm_tail;
use crate::samplers::{ess, run_independence, run_rwm, ChainConfig, SampleSet, SamplerKind};
use crate::stats::{derive_seed, norm, rng_from_seed};

/// Smallest sample count accepted by [`tv_importance`].
pub const MIN_IMPORTANCE_SAMPLES: usize = 10_000;
/// Smallest per-component ESS accepted by [`moment_gap`].
pub const MIN_MOMENT_ESS: f64 = 500.0;
/// Smallest replication count accepted by [`credible_coverage`].
pub const MIN_COVERAGE_REPS: usize = 100;

const IMPORTANCE_BATCHES: usize = 20;
/// Half-width, in marginal standard deviations, of the window around the
/// Gaussian used to place the quadrature lattice.
const WINDOW_SDS: f64 = 12.0;
/// Log-density drop below the maximum treated as zero mass.
const NEGLIGIBLE_LOG_DENSITY: f64 = 46.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TvMethod {
    Grid,
    Importance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TVEstimate {
    pub value: f64,
    pub std_err: f64,
    pub method: TvMethod,
    /// Lattice cells or importance samples.
    pub m: usize,
}

/// The posterior pulled back to local coordinates `u = √n (q - q0)`.
pub struct LocalTarget<'a, G> {
    pub spec: &'a PosteriorSpec<G>,
}

impl<G: ForwardMap> LogTarget for LocalTarget<'_, G> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }
    fn log_density(&self, u: &[f64]) -> f64 {
        self.spec.log_posterior_unnorm(&self.spec.to_original(u))
    }
    fn bounds(&self) -> Option<Bounds> {
        None
    }
}

struct Lattice {
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: usize,
}

impl Lattice {
    fn len(&self) -> usize {
        self.cells.pow(self.lo.len() as u32)
    }

    fn widths(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) / self.cells as f64)
            .collect()
    }

    fn volume(&self) -> f64 {
        self.widths().iter().product()
    }

    fn midpoint(&self, mut idx: usize) -> Vec<f64> {
        let w = self.widths();
        (0..self.lo.len())
            .map(|k| {
                let i = idx % self.cells;
                idx /= self.cells;
                self.lo[k] + (i as f64 + 0.5) * w[k]
            })
            .collect()
    }

    fn log_densities<T: LogTarget + ?Sized>(&self, target: &T) -> Vec<f64> {
        (0..self.len())
            .into_par_iter()
            .map(|i| target.log_density(&self.midpoint(i)))
            .collect()
    }
}

/// Box on which the lattice is laid: the Gaussian's `±12σ` window joined
/// with the region where a coarse scan finds non-negligible target mass,
/// clipped to the target's support.
fn integration_region<T: LogTarget + ?Sized>(target: &T, phi: &MvNormal) -> (Vec<f64>, Vec<f64>) {
    let d = phi.dim();
    let sd = phi.marginal_sd();
    let mut lo: Vec<f64> = (0..d).map(|k| phi.mean()[k] - WINDOW_SDS * sd[k]).collect();
    let mut hi: Vec<f64> = (0..d).map(|k| phi.mean()[k] + WINDOW_SDS * sd[k]).collect();
    let Some(b) = target.bounds() else {
        return (lo, hi);
    };
    let coarse = Lattice {
        lo: vec![b.lower; d],
        hi: vec![b.upper; d],
        cells: if d == 1 { 20_000 } else { 200 },
    };
    let ld = coarse.log_densities(target);
    let max = ld.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        let w = coarse.widths();
        for (i, &l) in ld.iter().enumerate() {
            if l >= max - NEGLIGIBLE_LOG_DENSITY {
                let x = coarse.midpoint(i);
                for k in 0..d {
                    lo[k] = lo[k].min(x[k] - w[k]);
                    hi[k] = hi[k].max(x[k] + w[k]);
                }
            }
        }
    }
    for k in 0..d {
        lo[k] = lo[k].max(b.lower);
        hi[k] = hi[k].min(b.upper);
        if lo[k] >= hi[k] {
            lo[k] = b.lower;
            hi[k] = b.upper;
        }
    }
    (lo, hi)
}

fn tv_on_lattice<T: LogTarget + ?Sized>(target: &T, phi: &MvNormal, lattice: &Lattice) -> Result<f64> {
    let ld = lattice.log_densities(target);
    let max = ld.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Estimator("target has no mass on the quadrature lattice".into()));
    }
    let vol = lattice.volume();
    let z: f64 = ld.iter().map(|l| (l - max).exp()).sum::<f64>() * vol;
    // collected before summing so the result does not depend on rayon's splits
    let terms: Vec<f64> = (0..lattice.len())
        .into_par_iter()
        .map(|i| {
            let p = (ld[i] - max).exp() / z;
            let g = phi.log_pdf(&lattice.midpoint(i)).exp();
            (p - g).abs()
        })
        .collect();
    let diff = terms.iter().sum::<f64>() * vol;
    let inside = phi.rect_probability(&lattice.lo, &lattice.hi)?;
    Ok((0.5 * (diff + (1.0 - inside))).clamp(0.0, 1.0))
}

/// Total variation distance by midpoint quadrature, for `d <= 2`.
///
/// The target is normalised on the same lattice. `std_err` is the change
/// against a lattice with half as many cells per axis.
pub fn tv_grid_target<T: LogTarget + ?Sized>(
    target: &T,
    phi: &MvNormal,
    cells_per_dim: usize,
) -> Result<TVEstimate> {
    let d = target.dim();
    if d > 2 {
        return Err(Error::Unsupported(format!("grid TV needs d <= 2, got {d}")));
    }
    if phi.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: phi.dim(),
        });
    }
    if cells_per_dim < 4 {
        return Err(Error::InvalidArgument(format!(
            "grid TV needs at least 4 cells per axis, got {cells_per_dim}"
        )));
    }
    if cells_per_dim < 50 {
        log::warn!("{cells_per_dim} cells per axis: quadrature error may dominate the TV estimate");
    }
    let (lo, hi) = integration_region(target, phi);
    let full = Lattice {
        lo: lo.clone(),
        hi: hi.clone(),
        cells: cells_per_dim,
    };
    let half = Lattice {
        lo,
        hi,
        cells: cells_per_dim / 2,
    };
    let value = tv_on_lattice(target, phi, &full)?;
    let coarse = tv_on_lattice(target, phi, &half)?;
    Ok(TVEstimate {
        value,
        std_err: (value - coarse).abs(),
        method: TvMethod::Grid,
        m: full.len(),
    })
}

/// Grid TV between the posterior and `N(Δ̄_n, Σ/n)`.
pub fn tv_grid<G: ForwardMap>(
    spec: &PosteriorSpec<G>,
    approx: &GaussianApprox,
    cells_per_dim: usize,
) -> Result<TVEstimate> {
    tv_grid_target(spec, approx.original(), cells_per_dim)
}

/// Grid TV in local coordinates, between the pulled-back posterior and `N(Δ_n, Σ)`.
pub fn tv_grid_local<G: ForwardMap>(
    spec: &PosteriorSpec<G>,
    approx: &GaussianApprox,
    cells_per_dim: usize,
) -> Result<TVEstimate> {
    tv_grid_target(&LocalTarget { spec }, approx.local(), cells_per_dim)
}

/// Self-normalised importance estimate of the TV distance with proposal `phi`.
///
/// `std_err` comes from 20 batch means, each batch normalised on its own.
pub fn tv_importance_target<T: LogTarget + ?Sized>(
    target: &T,
    phi: &MvNormal,
    m: usize,
    seed: u64,
) -> Result<TVEstimate> {
    if m < MIN_IMPORTANCE_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "importance TV needs at least {MIN_IMPORTANCE_SAMPLES} samples, got {m}"
        )));
    }
    if phi.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: phi.dim(),
        });
    }
    let mut rng = rng_from_seed(seed);
    let draws: Vec<Vec<f64>> = (0..m).map(|_| phi.sample(&mut rng)).collect();
    let log_w: Vec<f64> = draws
        .par_iter()
        .map(|x| target.log_density(x) - phi.log_pdf(x))
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Estimator(
            "normalising constant estimate is zero: no proposal has positive target density".into(),
        ));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let z = w.iter().sum::<f64>() / m as f64;
    let value = 0.5 * w.iter().map(|wi| (wi / z - 1.0).abs()).sum::<f64>() / m as f64;

    let size = m / IMPORTANCE_BATCHES;
    let batch_values: Vec<f64> = w
        .chunks(size)
        .take(IMPORTANCE_BATCHES)
        .map(|chunk| {
            let zb = chunk.iter().sum::<f64>() / chunk.len() as f64;
            let zb = if zb > 0.0 { zb } else { z };
            0.5 * chunk.iter().map(|wi| (wi / zb - 1.0).abs()).sum::<f64>() / chunk.len() as f64
        })
        .collect();
    let std_err = (crate::stats::variance(&batch_values) / batch_values.len() as f64).sqrt();
    Ok(TVEstimate {
        value: value.clamp(0.0, 1.0),
        std_err,
        method: TvMethod::Importance,
        m,
    })
}

/// Importance TV between the posterior and `N(Δ̄_n, Σ/n)`.
pub fn tv_importance<G: ForwardMap>(
    spec: &PosteriorSpec<G>,
    approx: &GaussianApprox,
    m: usize,
    seed: u64,
) -> Result<TVEstimate> {
    tv_importance_target(spec, approx.original(), m, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentGap {
    /// `|sample mean - Δ̄_n|`.
    pub mean_gap: f64,
    /// Operator norm of `sample covariance - Σ/n`.
    pub cov_gap: f64,
    /// Both gaps divided by `sqrt(tr(Σ/n))`.
    pub mean_gap_rel: f64,
    pub cov_gap_rel: f64,
    pub min_ess: f64,
}

pub fn moment_gap(samples: &SampleSet, approx: &GaussianApprox) -> Result<MomentGap> {
    let d = samples.d;
    if d != approx.dim() {
        return Err(Error::DimensionMismatch {
            expected: approx.dim(),
            got: d,
        });
    }
    let min_ess = ess(samples)?.into_iter().fold(f64::INFINITY, f64::min);
    if min_ess < MIN_MOMENT_ESS {
        return Err(Error::Estimator(format!(
            "effective sample size {min_ess:.0} below {MIN_MOMENT_ESS}"
        )));
    }
    let mean = nalgebra::DVector::from_vec(samples.mean());
    let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
    for s in &samples.samples {
        let r = nalgebra::DVector::from_column_slice(s) - &mean;
        cov += &r * r.transpose();
    }
    cov /= samples.len() as f64 - 1.0;
    let mean_gap = (&mean - &approx.center_orig).norm();
    let cov_gap = (&cov - &approx.cov_orig)
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = approx.cov_orig.trace().sqrt();
    Ok(MomentGap {
        mean_gap,
        cov_gap,
        mean_gap_rel: mean_gap / scale,
        cov_gap_rel: cov_gap / scale,
        min_ess,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CredibleSet {
    /// `{q : (q - Δ̄_n)^T (Σ/n)^-1 (q - Δ̄_n) <= χ²_d(1 - α)}`.
    Ellipsoid,
    /// Highest posterior density set estimated from an MCMC run of `n_steps`.
    Hpd { n_steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub alpha: f64,
    pub n_reps: usize,
    pub hits: usize,
    pub coverage: f64,
    /// Twice the binomial standard error at the observed coverage.
    pub ci_halfwidth: f64,
    pub method: CredibleSet,
}

impl CoverageResult {
    /// Binomial standard error at the nominal level `1 - α`.
    pub fn nominal_std_err(&self) -> f64 {
        (self.alpha * (1.0 - self.alpha) / self.n_reps as f64).sqrt()
    }
}

/// Frequentist coverage of the credible set at level `1 - α`, over
/// `n_reps` independent noise draws.
#[allow(clippy::too_many_arguments)]
pub fn credible_coverage<G: ForwardMap>(
    model: &G,
    prior: PriorSpec,
    q0: &[f64],
    n: f64,
    alpha: f64,
    n_reps: usize,
    seed: u64,
    method: CredibleSet,
) -> Result<CoverageResult> {
    if n_reps < MIN_COVERAGE_REPS {
        return Err(Error::InvalidArgument(format!(
            "coverage needs at least {MIN_COVERAGE_REPS} replications, got {n_reps}"
        )));
    }
    coverage_replications(model, prior, q0, n, alpha, n_reps, seed, method)
}

/// [`credible_coverage`] without the replication floor; the sweep runs
/// smaller batches per cell.
#[allow(clippy::too_many_arguments)]
pub(crate) fn coverage_replications<G: ForwardMap>(
    model: &G,
    prior: PriorSpec,
    q0: &[f64],
    n: f64,
    alpha: f64,
    n_reps: usize,
    seed: u64,
    method: CredibleSet,
) -> Result<CoverageResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n_reps == 0 {
        return Err(Error::InvalidArgument("need at least one replication".into()));
    }
    let d = model.dim();
    let radius_sq = ChiSquared::new(d as f64)
        .map_err(|e| Error::Internal(e.to_string()))?
        .inverse_cdf(1.0 - alpha);
    let outcomes: Vec<bool> = (0..n_reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(seed, r as u64);
            let spec = PosteriorSpec::synthesize(model, prior, q0.to_vec(), n, rep_seed)?;
            let approx = spec.gaussian_approx()?;
            match method {
                CredibleSet::Ellipsoid => Ok(approx.original().mahalanobis_sq(q0) <= radius_sq),
                CredibleSet::Hpd { n_steps } => {
                    let chain = posterior_chain(&spec, &approx, n_steps, derive_seed(rep_seed, 1))?;
                    let mut ld = chain.log_density.clone();
                    ld.sort_by(f64::total_cmp);
                    let cut = ld[((alpha * ld.len() as f64) as usize).min(ld.len() - 1)];
                    Ok(spec.log_posterior_unnorm(q0) >= cut)
                }
            }
        })
        .collect::<Result<_>>()?;
    let hits = outcomes.iter().filter(|&&h| h).count();
    let coverage = hits as f64 / n_reps as f64;
    Ok(CoverageResult {
        alpha,
        n_reps,
        hits,
        coverage,
        ci_halfwidth: 2.0 * (coverage * (1.0 - coverage) / n_reps as f64).sqrt(),
        method,
    })
}

/// Independence sampler with the Gaussian approximation as proposal, falling
/// back to reflected random walk when the proposal mostly misses the box.
pub fn posterior_chain<G: ForwardMap>(
    spec: &PosteriorSpec<G>,
    approx: &GaussianApprox,
    n_steps: usize,
    seed: u64,
) -> Result<SampleSet> {
    let d = spec.dim();
    let cfg = ChainConfig::new(SamplerKind::IndependenceGauss, d, n_steps, seed);
    match run_independence(spec, approx, &cfg) {
        Err(Error::Sampler(msg)) => {
            log::info!("independence sampler failed ({msg}); using random walk");
            run_rwm(spec, &ChainConfig::new(SamplerKind::RwmReflect, d, n_steps, seed))
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionResult {
    pub m: f64,
    /// `n^-1/2 K(d)`.
    pub eps_n: f64,
    pub mass_outside: f64,
}

/// Empirical posterior mass of `{|q - q0| >= M n^-1/2 K(d)}` for each `M`.
pub fn contraction_probe(samples: &SampleSet, q0: &[f64], n: f64, k: f64, m_list: &[f64]) -> Vec<ContractionResult> {
    let eps_n = k_of_d(samples.d, k) / n.sqrt();
    let dist: Vec<f64> = samples
        .samples
        .iter()
        .map(|s| norm(&s.iter().zip(q0).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .collect();
    m_list
        .iter()
        .map(|&m| {
            let r = m * eps_n;
            let out = dist.iter().filter(|&&x| x >= r).count();
            ContractionResult {
                m,
                eps_n,
                mass_outside: if dist.is_empty() { 0.0 } else { out as f64 / dist.len() as f64 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMass {
    pub radius: f64,
    /// Empirical posterior mass of `{|u| > radius}`, `u = √n (q - q0)`.
    pub posterior_tail: f64,
    /// `N(Δ_n, Σ)` mass of the same set.
    pub gaussian_tail: f64,
}

/// Tail masses outside the local ball `|u| <= radius`.
pub fn tail_mass_at_radius(
    samples: &SampleSet,
    approx: &GaussianApprox,
    q0: &[f64],
    n: f64,
    radius: f64,
) -> Result<TailMass> {
    let s = n.sqrt();
    let outside = samples
        .samples
        .iter()
        .filter(|q| norm(&q.iter().zip(q0).map(|(a, b)| s * (a - b)).collect::<Vec<_>>()) > radius)
        .count();
    Ok(TailMass {
        radius,
        posterior_tail: if samples.is_empty() { 0.0 } else { outside as f64 / samples.len() as f64 },
        gaussian_tail: gaussian_norm_tail(approx.local(), radius)?,
    })
}

/// [`tail_mass_at_radius`] at `K(d)`.
pub fn tail_mass_probe(
    samples: &SampleSet,
    approx: &GaussianApprox,
    q0: &[f64],
    n: f64,
    k: f64,
) -> Result<TailMass> {
    tail_mass_at_radius(samples, approx, q0, n, k_of_d(samples.d, k))
}

//! Metropolis samplers on the box support and effective sample size.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Bounds;
use crate::gaussian::MvNormal;
use crate::model::ForwardMap;
use crate::posterior::{GaussianApprox, LogTarget, PosteriorSpec};
use crate::stats::{rng_from_seed, standard_normal_vec};

/// Minimum number of kept samples for [`ess`].
pub const MIN_ESS_SAMPLES: usize = 100;

/// Proposal rejection rate against the support above which the independence
/// sampler gives up.
pub const MAX_SUPPORT_REJECTION: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    RwmReflect,
    IndependenceGauss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ChainInit {
    /// `q0` plus one proposal-sized perturbation.
    #[default]
    PerturbedTruth,
    PriorDraw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub kind: SamplerKind,
    pub step_scale: f64,
    pub n_steps: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    #[serde(default)]
    pub init: ChainInit,
}

impl ChainConfig {
    /// Step `2.4/√d`, burn-in 20% of the steps, no thinning.
    pub fn new(kind: SamplerKind, d: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            kind,
            step_scale: 2.4 / (d.max(1) as f64).sqrt(),
            n_steps,
            n_burn: n_steps / 5,
            thin: 1,
            seed,
            init: ChainInit::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps <= self.n_burn {
            return Err(Error::InvalidArgument(format!(
                "n_steps ({}) must exceed n_burn ({})",
                self.n_steps, self.n_burn
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if !(self.step_scale > 0.0) || !self.step_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step_scale must be positive, got {}",
                self.step_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub d: usize,
    pub kind: SamplerKind,
    pub seed: u64,
    /// Kept states, one row per sample.
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    /// Unnormalised log density at each kept state.
    pub log_density: Vec<f64>,
    /// Fraction of independence proposals discarded for leaving the box.
    pub support_rejection_rate: f64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[k]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for s in &self.samples {
            for (a, b) in m.iter_mut().zip(s) {
                *a += b;
            }
        }
        let n = self.samples.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// Folds `x` back into `[lo, hi]` by repeated mirroring at the end points.
///
/// The identity on `[lo, hi]`. A proposal `x + ξ` with symmetric `ξ`, folded
/// this way, has a transition density symmetric in its two arguments.
pub fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&x) {
        return x;
    }
    let w = hi - lo;
    let r = (x - lo).rem_euclid(2.0 * w);
    let y = if r <= w { lo + r } else { hi - (r - w) };
    y.clamp(lo, hi)
}

fn reflect_all(x: &mut [f64], bounds: Option<Bounds>) {
    if let Some(b) = bounds {
        for v in x {
            *v = reflect(*v, b.lower, b.upper);
        }
    }
}

/// Random-walk Metropolis with isotropic Gaussian steps of standard
/// deviation `proposal_sd`, reflected into the target's box.
pub fn rwm_on_target<T: LogTarget + ?Sized>(
    target: &T,
    start: Vec<f64>,
    proposal_sd: f64,
    cfg: &ChainConfig,
) -> Result<SampleSet> {
    cfg.validate()?;
    let d = target.dim();
    crate::model::check_len(d, &start)?;
    let bounds = target.bounds();
    let mut rng = rng_from_seed(cfg.seed);
    let mut x = start;
    reflect_all(&mut x, bounds);
    let mut lx = target.log_density(&x);
    if !lx.is_finite() {
        return Err(Error::Sampler("initial state has zero posterior density".into()));
    }
    let mut samples = Vec::with_capacity((cfg.n_steps - cfg.n_burn) / cfg.thin + 1);
    let mut trace = Vec::with_capacity(samples.capacity());
    let mut accepted_burn = 0usize;
    let mut accepted_main = 0usize;
    for step in 0..cfg.n_steps {
        let z = standard_normal_vec(&mut rng, d);
        let mut y: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + proposal_sd * b).collect();
        reflect_all(&mut y, bounds);
        let ly = target.log_density(&y);
        let u: f64 = rng.random();
        if ly.is_finite() && (ly >= lx || u.ln() < ly - lx) {
            x = y;
            lx = ly;
            if step < cfg.n_burn {
                accepted_burn += 1;
            } else {
                accepted_main += 1;
            }
        }
        if step + 1 == cfg.n_burn && accepted_burn == 0 {
            return Err(Error::Sampler(format!(
                "no proposal accepted during {} burn-in steps; decrease step_scale (now {})",
                cfg.n_burn, cfg.step_scale
            )));
        }
        if step >= cfg.n_burn && (step - cfg.n_burn) % cfg.thin == 0 {
            samples.push(x.clone());
            trace.push(lx);
        }
    }
    Ok(SampleSet {
        d,
        kind: SamplerKind::RwmReflect,
        seed: cfg.seed,
        samples,
        acceptance_rate: accepted_main as f64 / (cfg.n_steps - cfg.n_burn) as f64,
        log_density: trace,
        support_rejection_rate: 0.0,
    })
}

fn proposal_sd(step_scale: f64, n: f64) -> f64 {
    if n > 0.0 {
        step_scale / n.sqrt()
    } else {
        step_scale
    }
}

/// Reflected random-walk Metropolis on the posterior with step
/// `step_scale · n^-1/2`.
pub fn run_rwm<G: ForwardMap>(spec: &PosteriorSpec<G>, cfg: &ChainConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let sd = proposal_sd(cfg.step_scale, spec.n);
    let mut init_rng = rng_from_seed(crate::stats::derive_seed(cfg.seed, 0x1417));
    let start = match cfg.init {
        ChainInit::PerturbedTruth => {
            let z = standard_normal_vec(&mut init_rng, spec.dim());
            spec.q0.iter().zip(&z).map(|(q, e)| q + sd * e).collect()
        }
        ChainInit::PriorDraw => spec.prior.sample(&mut init_rng),
    };
    rwm_on_target(spec, start, sd, cfg)
}

/// Independence Metropolis-Hastings with a Gaussian proposal restricted to
/// the target's box by rejection.
pub fn independence_on_target<T: LogTarget + ?Sized>(
    target: &T,
    proposal: &MvNormal,
    cfg: &ChainConfig,
) -> Result<SampleSet> {
    cfg.validate()?;
    let d = target.dim();
    if proposal.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: proposal.dim(),
        });
    }
    let bounds = target.bounds();
    let mut rng = rng_from_seed(cfg.seed);
    let mut attempts = 0usize;
    let mut outside = 0usize;
    let mut draw = |rng: &mut crate::stats::LabRng| -> Result<Vec<f64>> {
        loop {
            let y = proposal.sample(rng);
            attempts += 1;
            if bounds.is_none_or(|b| b.contains_all(&y)) {
                return Ok(y);
            }
            outside += 1;
            if attempts >= 1000 && outside as f64 > MAX_SUPPORT_REJECTION * attempts as f64 {
                return Err(Error::Sampler(format!(
                    "{outside} of {attempts} Gaussian proposals fell outside the support"
                )));
            }
        }
    };
    let mut x = draw(&mut rng)?;
    let mut lx = target.log_density(&x);
    let mut wx = lx - proposal.log_pdf(&x);
    let mut samples = Vec::with_capacity((cfg.n_steps - cfg.n_burn) / cfg.thin + 1);
    let mut trace = Vec::with_capacity(samples.capacity());
    let mut accepted = 0usize;
    for step in 0..cfg.n_steps {
        let y = draw(&mut rng)?;
        let ly = target.log_density(&y);
        let wy = ly - proposal.log_pdf(&y);
        let u: f64 = rng.random();
        if ly.is_finite() && (!lx.is_finite() || wy >= wx || u.ln() < wy - wx) {
            x = y;
            lx = ly;
            wx = wy;
            if step >= cfg.n_burn {
                accepted += 1;
            }
        }
        if step >= cfg.n_burn && (step - cfg.n_burn) % cfg.thin == 0 {
            if !lx.is_finite() {
                return Err(Error::Sampler("chain never reached positive density".into()));
            }
            samples.push(x.clone());
            trace.push(lx);
        }
    }
    Ok(SampleSet {
        d,
        kind: SamplerKind::IndependenceGauss,
        seed: cfg.seed,
        samples,
        acceptance_rate: accepted as f64 / (cfg.n_steps - cfg.n_burn) as f64,
        log_density: trace,
        support_rejection_rate: outside as f64 / attempts as f64,
    })
}

/// Independence sampler on the posterior with proposal `N(Δ̄_n, Σ/n)`.
pub fn run_independence<G: ForwardMap>(
    spec: &PosteriorSpec<G>,
    approx: &GaussianApprox,
    cfg: &ChainConfig,
) -> Result<SampleSet> {
    independence_on_target(spec, approx.original(), cfg)
}

/// Dispatches on `cfg.kind`.
pub fn run_chain<G: ForwardMap>(
    spec: &PosteriorSpec<G>,
    approx: Option<&GaussianApprox>,
    cfg: &ChainConfig,
) -> Result<SampleSet> {
    match cfg.kind {
        SamplerKind::RwmReflect => run_rwm(spec, cfg),
        SamplerKind::IndependenceGauss => {
            let owned;
            let approx = match approx {
                Some(a) => a,
                None => {
                    owned = spec.gaussian_approx()?;
                    &owned
                }
            };
            run_independence(spec, approx, cfg)
        }
    }
}

/// Normalised autocorrelation `ρ_0..ρ_{n-1}` via zero-padded FFT.
pub fn autocorrelation(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = crate::stats::mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - m, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if c0 <= 0.0 {
        return vec![1.0; n];
    }
    buf.iter().take(n).map(|c| c.re / c0).collect()
}

/// Effective sample size of one series with Geyer's initial positive
/// sequence truncation, capped to `[1, n]`.
pub fn ess_series(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < MIN_ESS_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "ESS needs at least {MIN_ESS_SAMPLES} samples, got {n}"
        )));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Ok(1.0);
    }
    let rho = autocorrelation(x);
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho[2 * k] + rho[2 * k + 1];
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1e-12);
    Ok((n as f64 / tau).clamp(1.0, n as f64))
}

/// Per-component effective sample size.
pub fn ess(samples: &SampleSet) -> Result<Vec<f64>> {
    (0..samples.d).map(|k| ess_series(&samples.component(k))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMetadata {
    pub d: usize,
    pub count: usize,
    pub kind: SamplerKind,
    pub seed: u64,
    pub acceptance_rate: f64,
    pub support_rejection_rate: f64,
    pub layout: String,
    pub log_density: Vec<f64>,
}

/// Sidecar path used by [`write_chain`]: `chain.bin` → `chain.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `u64 d`, `u64 count`, then the samples as row-major `f64`, all
/// little endian, plus a JSON sidecar with the remaining fields.
pub fn write_chain(path: &Path, set: &SampleSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(&(set.d as u64).to_le_bytes())?;
    put(&(set.samples.len() as u64).to_le_bytes())?;
    for s in &set.samples {
        for v in s {
            put(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = ChainMetadata {
        d: set.d,
        count: set.samples.len(),
        kind: set.kind,
        seed: set.seed,
        acceptance_rate: set.acceptance_rate,
        support_rejection_rate: set.support_rejection_rate,
        layout: "u64-le d, u64-le count, f64-le row-major".into(),
        log_density: set.log_density.clone(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn read_chain(path: &Path) -> Result<SampleSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut word = [0u8; 8];
    let mut next = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
        r.read_exact(&mut word).map_err(|e| Error::io(path, e))?;
        Ok(word)
    };
    let d = u64::from_le_bytes(next(&mut r)?) as usize;
    let count = u64::from_le_bytes(next(&mut r)?) as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut row = Vec::with_capacity(d);
        for _ in 0..d {
            row.push(f64::from_le_bytes(next(&mut r)?));
        }
        samples.push(row);
    }
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: ChainMetadata = serde_json::from_str(&text)?;
    if meta.d != d || meta.count != count {
        return Err(Error::InvalidArgument(format!(
            "sidecar {} disagrees with chain header",
            side.display()
        )));
    }
    Ok(SampleSet {
        d,
        kind: meta.kind,
        seed: meta.seed,
        samples,
        acceptance_rate: meta.acceptance_rate,
        log_density: meta.log_density,
        support_rejection_rate: meta.support_rejection_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{GridSpec, MediumProblem, ProblemData};
    use crate::posterior::{GaussianTarget, PriorSpec};
    use crate::stats::{mean, variance};
    use nalgebra::{DMatrix, DVector};
    use rand_distr::StandardNormal;

    fn scalar_spec(n: f64) -> PosteriorSpec<MediumProblem> {
        let grid = GridSpec::new(2).unwrap();
        let model = MediumProblem::new(grid, ProblemData::constant(&grid, 1.0, 1.0), Bounds::default()).unwrap();
        let prior = PriorSpec::uniform(model.bounds, 1);
        PosteriorSpec::synthesize(model, prior, vec![5.0], n, 11).unwrap()
    }

    #[test]
    fn reflection_properties() {
        assert_eq!(reflect(0.5, 0.0, 1.0), 0.5);
        assert_eq!(reflect(0.0, 0.0, 1.0), 0.0);
        assert!((reflect(-0.25, 0.0, 1.0) - 0.25).abs() < 1e-15);
        assert!((reflect(1.25, 0.0, 1.0) - 0.75).abs() < 1e-15);
        assert!((reflect(2.25, 0.0, 1.0) - 0.25).abs() < 1e-15);
        assert!((reflect(-1.75, 0.0, 1.0) - 0.25).abs() < 1e-15);
        // single mirror is an involution
        for x in [-0.3f64, 1.7] {
            let m = if x < 0.0 { -x } else { 2.0 - x };
            let back = if x < 0.0 { -m } else { 2.0 - m };
            assert!((back - x).abs() < 1e-15);
            assert!((reflect(x, 0.0, 1.0) - m).abs() < 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = ChainConfig::new(SamplerKind::RwmReflect, 4, 100, 0);
        assert!((c.step_scale - 1.2).abs() < 1e-15);
        assert_eq!(c.n_burn, 20);
        c.validate().unwrap();
        c.n_burn = 100;
        assert!(c.validate().is_err());
        c.n_burn = 0;
        c.thin = 0;
        assert!(c.validate().is_err());
        c.thin = 1;
        c.step_scale = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn prior_only_chain_centres_on_midpoint() {
        let spec = scalar_spec(1.0);
        let zero = PosteriorSpec::from_observation(
            spec.model.clone(),
            spec.prior,
            spec.q0.clone(),
            spec.eta.clone(),
            spec.y.clone(),
            0.0,
        )
        .unwrap();
        let mut cfg = ChainConfig::new(SamplerKind::RwmReflect, 1, 60_000, 4);
        cfg.step_scale = 4.0;
        let set = run_rwm(&zero, &cfg).unwrap();
        let xs = set.component(0);
        let ess = ess_series(&xs).unwrap();
        let se = (variance(&xs) / ess).sqrt();
        assert!((mean(&xs) - 5.05).abs() <= 3.0 * se, "mean {} se {se}", mean(&xs));
        assert!(set.samples.iter().all(|s| Bounds::default().contains_all(s)));
    }

    #[test]
    fn chains_are_deterministic() {
        let spec = scalar_spec(1e4);
        let cfg = ChainConfig::new(SamplerKind::RwmReflect, 1, 2000, 9);
        let a = run_rwm(&spec, &cfg).unwrap();
        let b = run_rwm(&spec, &cfg).unwrap();
        assert_eq!(a, b);
        let approx = spec.gaussian_approx().unwrap();
        let cfg = ChainConfig::new(SamplerKind::IndependenceGauss, 1, 2000, 9);
        assert_eq!(
            run_independence(&spec, &approx, &cfg).unwrap(),
            run_independence(&spec, &approx, &cfg).unwrap()
        );
    }

    #[test]
    fn tiny_steps_on_flat_target_never_stall() {
        // a flat target accepts every in-box move
        let spec = scalar_spec(1.0);
        let zero = PosteriorSpec::from_observation(
            spec.model.clone(),
            spec.prior,
            spec.q0.clone(),
            spec.eta.clone(),
            spec.y.clone(),
            0.0,
        )
        .unwrap();
        let cfg = ChainConfig::new(SamplerKind::RwmReflect, 1, 500, 1);
        assert_eq!(run_rwm(&zero, &cfg).unwrap().acceptance_rate, 1.0);
    }

    #[test]
    fn stuck_chain_is_reported() {
        // step far larger than the posterior width: every proposal is rejected
        let spec = scalar_spec(1e12);
        let mut cfg = ChainConfig::new(SamplerKind::RwmReflect, 1, 400, 1);
        cfg.step_scale = 1e9;
        let err = rwm_on_target(&spec, spec.q0.clone(), cfg.step_scale / 1e6, &cfg).unwrap_err();
        assert!(err.to_string().contains("step_scale"));
    }

    #[test]
    fn independence_on_identical_target_accepts_all() {
        let normal = MvNormal::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]),
        )
        .unwrap();
        let target = GaussianTarget {
            normal: &normal,
            log_scale: 0.0,
        };
        let cfg = ChainConfig::new(SamplerKind::IndependenceGauss, 2, 3000, 5);
        let set = independence_on_target(&target, &normal, &cfg).unwrap();
        assert_eq!(set.acceptance_rate, 1.0);
        assert_eq!(set.support_rejection_rate, 0.0);
    }

    #[test]
    fn proposal_outside_support_errors() {
        let spec = scalar_spec(1e4);
        let far = MvNormal::new(DVector::from_vec(vec![100.0]), DMatrix::identity(1, 1)).unwrap();
        let cfg = ChainConfig::new(SamplerKind::IndependenceGauss, 1, 100, 5);
        assert!(matches!(independence_on_target(&spec, &far, &cfg), Err(Error::Sampler(_))));
    }

    #[test]
    fn iid_ess_near_count() {
        let mut rng = rng_from_seed(3);
        let x: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let e = ess_series(&x).unwrap();
        assert!((e / 5000.0 - 1.0).abs() <= 0.2, "ess {e}");
    }

    #[test]
    fn constant_chain_ess_is_one() {
        assert_eq!(ess_series(&[2.5; 500]).unwrap(), 1.0);
        assert!(ess_series(&[1.0; 99]).is_err());
    }

    #[test]
    fn ar1_ess_factor() {
        let mut rng = rng_from_seed(8);
        let rho = 0.5f64;
        let n = 100_000;
        let mut x = Vec::with_capacity(n);
        let mut v = 0.0;
        for _ in 0..n {
            v = rho * v + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
            x.push(v);
        }
        let ratio = ess_series(&x).unwrap() / n as f64;
        assert!((ratio / (1.0 / 3.0) - 1.0).abs() <= 0.25, "ratio {ratio}");
    }

    #[test]
    fn chain_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.bin");
        let spec = scalar_spec(1e4);
        let set = run_rwm(&spec, &ChainConfig::new(SamplerKind::RwmReflect, 1, 500, 2)).unwrap();
        write_chain(&path, &set).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 8 * set.len());
        assert_eq!(read_chain(&path).unwrap(), set);
    }
}

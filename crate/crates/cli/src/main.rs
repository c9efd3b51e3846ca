use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bvm_core::audit::{audit_linearization, audit_stability};
use bvm_core::diagnostics::{
    contraction_probe, credible_coverage, tail_mass_probe, tv_grid, tv_importance, CredibleSet,
};
use bvm_core::jacobian::sigma_growth_fit;
use bvm_core::posterior::k_of_d;
use bvm_core::samplers::{read_chain, run_independence, run_rwm, write_chain, ChainInit};
use bvm_core::sweep::{delta_n, emit_report, run_sweep, DeltaVariant, SweepPlan, TruthField};
use bvm_core::{
    eigenvalues_of_a, jacobian, max_principle_check, spectral_report, ChainConfig, ForwardMap,
    MediumProblem, PosteriorSpec, PriorSpec, SamplerKind,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "bvm-lab", version, about = "Bernstein-von Mises lab for the discrete inverse medium problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Uniform,
    TruncatedNormal,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Rwm,
    Independence,
}

#[derive(Clone, Copy, ValueEnum)]
enum TvMethodArg {
    Grid,
    Importance,
}

#[derive(Clone, Copy, ValueEnum)]
enum CredibleArg {
    Ellipsoid,
    Hpd,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem for a constant or sinusoidal coefficient.
    Solve {
        #[arg(long)]
        n_grid: usize,
        /// Constant coefficient; the default is 3 + 2 sin(πx) sin(πy).
        #[arg(long)]
        q_const: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Singular values of the Jacobian and its inverse over several grids.
    Spectra {
        #[arg(long, value_delimiter = ',', default_value = "4,6,8,12,16")]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 3.0)]
        q_const: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomised stability and linearisation audit.
    Audit {
        #[arg(long)]
        n_grid: usize,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesise data and write a posterior spec with its Gaussian approximation.
    Posterior {
        #[arg(long)]
        n_grid: usize,
        /// Noise parameter n (noise standard deviation n^-1/2).
        #[arg(long)]
        n: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "uniform")]
        prior: PriorArg,
        #[arg(long)]
        q_const: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Markov chain on a stored posterior spec.
    Sample {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "rwm")]
        kind: KindArg,
        #[arg(long, default_value_t = 200_000)]
        steps: usize,
        #[arg(long)]
        burn: Option<usize>,
        #[arg(long)]
        step_scale: Option<f64>,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        prior_start: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Total variation distance between the posterior and its Gaussian approximation.
    Tv {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "importance")]
        method: TvMethodArg,
        #[arg(long, default_value_t = 20_000)]
        cells: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frequentist coverage of credible sets over repeated noise draws.
    Coverage {
        #[arg(long)]
        n_grid: usize,
        #[arg(long)]
        n: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "uniform")]
        prior: PriorArg,
        #[arg(long)]
        q_const: Option<f64>,
        #[arg(long, value_enum, default_value = "ellipsoid")]
        method: CredibleArg,
        #[arg(long, default_value_t = 5000)]
        hpd_steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior mass outside shrinking balls around the truth, from a stored chain.
    Contraction {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        m: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a (d, n) sweep from a plan file and write records and plots.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
    },
}

/// Posterior inputs as stored on disk.
#[derive(Serialize, Deserialize)]
struct SpecFile {
    n_grid: usize,
    d: usize,
    n: f64,
    seed: u64,
    prior: PriorSpec,
    q0: Vec<f64>,
    eta: Vec<f64>,
    y: Vec<f64>,
    k: f64,
    delta_n_paper: f64,
    delta_n_general: f64,
    k_d: f64,
    gaussian: GaussianSummary,
}

#[derive(Serialize, Deserialize)]
struct GaussianSummary {
    delta_n: Vec<f64>,
    center: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl SpecFile {
    fn load(path: &Path) -> Result<(Self, PosteriorSpec<MediumProblem>)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: SpecFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let model = MediumProblem::with_defaults(file.n_grid)?;
        let spec = PosteriorSpec::from_observation(
            model,
            file.prior,
            file.q0.clone(),
            file.eta.clone(),
            nalgebra::DVector::from_vec(file.y.clone()),
            file.n,
        )?;
        Ok((file, spec))
    }
}

fn truth(q_const: Option<f64>) -> TruthField {
    q_const.map_or(TruthField::Sinusoid, |value| TruthField::Constant { value })
}

fn prior_for(arg: PriorArg, model: &MediumProblem) -> PriorSpec {
    match arg {
        PriorArg::Uniform => PriorSpec::uniform(model.bounds, model.dim()),
        PriorArg::TruncatedNormal => PriorSpec::truncated_normal(model.bounds, model.dim()),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve { n_grid, q_const, out } => {
            let model = MediumProblem::with_defaults(n_grid)?;
            let q = truth(q_const).values(&model.grid, model.bounds)?;
            let (_, u) = model.solve(&q)?;
            let mp = max_principle_check(&u, &model.data);
            emit(
                &serde_json::json!({
                    "grid": model.grid,
                    "q": q,
                    "u": u.u,
                    "max_principle": mp,
                }),
                out.as_deref(),
            )?;
        }
        Command::Spectra { n_grid, q_const, out } => {
            let mut reports = Vec::new();
            let mut eig_err: f64 = 0.0;
            for &ng in &n_grid {
                let model = MediumProblem::with_defaults(ng)?;
                let q = vec![q_const; model.dim()];
                let (sys, u) = model.solve(&q)?;
                reports.push(spectral_report(&jacobian(&sys, &u)?)?);
                let a = bvm_core::forward::laplacian_matrix(&model.grid);
                let mut numeric: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
                numeric.sort_by(f64::total_cmp);
                for (x, y) in numeric.iter().zip(eigenvalues_of_a(&model.grid)) {
                    eig_err = eig_err.max((x - y).abs());
                }
            }
            let fit = if reports.len() >= 3 { Some(sigma_growth_fit(&reports)?) } else { None };
            emit(
                &serde_json::json!({
                    "q_const": q_const,
                    "reports": reports,
                    "growth_fit": fit,
                    "max_eigenvalue_error": eig_err,
                }),
                out.as_deref(),
            )?;
        }
        Command::Audit { n_grid, pairs, seed, out } => {
            let model = MediumProblem::with_defaults(n_grid)?;
            let stability = audit_stability(&model, model.bounds, pairs, seed)?;
            let base = TruthField::Sinusoid.values(&model.grid, model.bounds)?;
            let radii = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
            let linearization = audit_linearization(&model, model.bounds, &base, &radii, 8, seed)?;
            emit(
                &serde_json::json!({ "stability": stability, "linearization": linearization }),
                out.as_deref(),
            )?;
        }
        Command::Posterior { n_grid, n, seed, prior, q_const, k, out } => {
            let model = MediumProblem::with_defaults(n_grid)?;
            let d = model.dim();
            let prior = prior_for(prior, &model);
            let q0 = truth(q_const).values(&model.grid, model.bounds)?;
            let spec = PosteriorSpec::synthesize(model, prior, q0, n, seed)?;
            let approx = spec.gaussian_approx()?;
            let file = SpecFile {
                n_grid,
                d,
                n,
                seed,
                prior,
                q0: spec.q0.clone(),
                eta: spec.eta.clone(),
                y: spec.y.iter().copied().collect(),
                k,
                delta_n_paper: delta_n(d, n, k, DeltaVariant::PaperThm4)?.value,
                delta_n_general: delta_n(d, n, k, DeltaVariant::General)?.value,
                k_d: k_of_d(d, k),
                gaussian: GaussianSummary {
                    delta_n: approx.delta_n.iter().copied().collect(),
                    center: approx.center_orig.iter().copied().collect(),
                    cov: approx.cov_orig.row_iter().map(|r| r.iter().copied().collect()).collect(),
                },
            };
            emit(&file, out.as_deref())?;
        }
        Command::Sample { spec, kind, steps, burn, step_scale, thin, seed, prior_start, out } => {
            let (_, spec) = SpecFile::load(&spec)?;
            let sampler = match kind {
                KindArg::Rwm => SamplerKind::RwmReflect,
                KindArg::Independence => SamplerKind::IndependenceGauss,
            };
            let mut cfg = ChainConfig::new(sampler, spec.dim(), steps, seed);
            if let Some(b) = burn {
                cfg.n_burn = b;
            }
            if let Some(s) = step_scale {
                cfg.step_scale = s;
            }
            cfg.thin = thin;
            if prior_start {
                cfg.init = ChainInit::PriorDraw;
            }
            let set = match kind {
                KindArg::Rwm => run_rwm(&spec, &cfg)?,
                KindArg::Independence => run_independence(&spec, &spec.gaussian_approx()?, &cfg)?,
            };
            write_chain(&out, &set)?;
            eprintln!(
                "{} samples, acceptance rate {:.4}, written to {}",
                set.len(),
                set.acceptance_rate,
                out.display()
            );
        }
        Command::Tv { spec, method, cells, samples, seed, out } => {
            let (_, spec) = SpecFile::load(&spec)?;
            let approx = spec.gaussian_approx()?;
            let est = match method {
                TvMethodArg::Grid => tv_grid(&spec, &approx, cells)?,
                TvMethodArg::Importance => tv_importance(&spec, &approx, samples, seed)?,
            };
            emit(&est, out.as_deref())?;
        }
        Command::Coverage { n_grid, n, alpha, reps, seed, prior, q_const, method, hpd_steps, out } => {
            let model = MediumProblem::with_defaults(n_grid)?;
            let prior = prior_for(prior, &model);
            let q0 = truth(q_const).values(&model.grid, model.bounds)?;
            let method = match method {
                CredibleArg::Ellipsoid => CredibleSet::Ellipsoid,
                CredibleArg::Hpd => CredibleSet::Hpd { n_steps: hpd_steps },
            };
            let res = credible_coverage(&model, prior, &q0, n, alpha, reps, seed, method)?;
            emit(&res, out.as_deref())?;
        }
        Command::Contraction { spec, chain, k, m, out } => {
            let (_, spec) = SpecFile::load(&spec)?;
            let set = read_chain(&chain)?;
            if set.d != spec.dim() {
                bail!("chain has dimension {}, spec has {}", set.d, spec.dim());
            }
            let approx = spec.gaussian_approx()?;
            let masses = contraction_probe(&set, &spec.q0, spec.n, k, &m);
            let tail = tail_mass_probe(&set, &approx, &spec.q0, spec.n, k)?;
            emit(
                &serde_json::json!({ "k": k, "contraction": masses, "tail": tail }),
                out.as_deref(),
            )?;
        }
        Command::Sweep { plan } => {
            let plan = SweepPlan::from_json_file(&plan)?;
            let outcome = run_sweep(&plan)?;
            let paths = emit_report(&outcome.records, &plan.out_dir)?;
            let failed = outcome.records.iter().filter(|r| !r.succeeded()).count();
            eprintln!(
                "{} cells ({} computed, {} reused), {failed} failed; report in {}",
                outcome.records.len(),
                outcome.computed,
                outcome.skipped,
                paths.json.display()
            );
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

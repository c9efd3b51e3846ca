//! `(d, n)` sweeps: per-cell experiments, resumable on-disk records, and
//! CSV/JSON/SVG reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    contraction_probe, coverage_replications, posterior_chain, tail_mass_probe, tv_grid, tv_importance,
    CredibleSet,
};
use crate::error::{Error, Result};
use crate::forward::{Bounds, GridSpec, MediumField, MediumProblem};
use crate::posterior::{k_of_d, PosteriorSpec, PriorSpec};
use crate::stats::{derive_seed, spearman};

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable capping the sweep's worker threads.
pub const THREADS_ENV: &str = "BVM_LAB_THREADS";
/// Contraction radii multipliers stored in every record.
pub const CONTRACTION_M: [f64; 3] = [1.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaVariant {
    /// `n^-1/2 d^3 ln d`.
    PaperThm4,
    /// `√(d/n) K(d)^2` with `σ(d) = d`.
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaN {
    pub value: f64,
    /// Set when `d = 1`, where `ln d = 0` makes both variants vanish.
    pub degenerate_log: bool,
}

pub fn delta_n(d: usize, n: f64, k: f64, variant: DeltaVariant) -> Result<DeltaN> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if !(n > 0.0) {
        return Err(Error::InvalidArgument(format!("noise parameter must be positive, got {n}")));
    }
    if d == 1 {
        return Ok(DeltaN {
            value: 0.0,
            degenerate_log: true,
        });
    }
    let df = d as f64;
    let value = match variant {
        DeltaVariant::PaperThm4 => df.powi(3) * df.ln() / n.sqrt(),
        DeltaVariant::General => (df / n).sqrt() * k_of_d(d, k).powi(2),
    };
    Ok(DeltaN {
        value,
        degenerate_log: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PriorChoice {
    #[default]
    Uniform,
    TruncatedNormal,
}

/// Coefficient used as the truth in every cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TruthField {
    /// `3 + 2 sin(πx) sin(πy)`.
    #[default]
    Sinusoid,
    Constant {
        value: f64,
    },
}

impl TruthField {
    pub fn values(&self, grid: &GridSpec, bounds: Bounds) -> Result<Vec<f64>> {
        let field = match *self {
            TruthField::Sinusoid => MediumField::from_fn(grid, bounds, |x, y| {
                3.0 + 2.0 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
            })?,
            TruthField::Constant { value } => MediumField::constant(grid, value, bounds)?,
        };
        Ok(field.values().to_vec())
    }
}

fn default_reps() -> usize {
    50
}
fn default_alpha() -> f64 {
    0.1
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_k() -> f64 {
    1.0
}
fn default_max_cells() -> usize {
    1000
}
fn default_tv_samples() -> usize {
    100_000
}
fn default_tv_cells() -> usize {
    20_000
}
fn default_chain_steps() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    /// Grid sizes `N`; each gives `d = (N-1)^2`.
    pub n_grid_list: Vec<usize>,
    /// Noise parameters `n`.
    pub n_list: Vec<f64>,
    /// Coverage replications per cell.
    #[serde(default = "default_reps")]
    pub coverage_reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// One cell per `(N, n, seed)`.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_k")]
    pub k_const: f64,
    #[serde(default)]
    pub prior: PriorChoice,
    #[serde(default)]
    pub truth: TruthField,
    pub out_dir: PathBuf,
    #[serde(default = "default_max_cells")]
    pub max_cells: usize,
    /// Importance samples per TV estimate (`d > 1`).
    #[serde(default = "default_tv_samples")]
    pub tv_samples: usize,
    /// Lattice cells for the grid TV estimate (`d = 1`).
    #[serde(default = "default_tv_cells")]
    pub tv_cells: usize,
    #[serde(default = "default_chain_steps")]
    pub chain_steps: usize,
    /// Records wall-clock time per cell; makes outputs run-dependent.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl SweepPlan {
    /// `N ∈ {3,4,5}`, `n ∈ {1e3,1e5,1e7}`, 50 coverage replications.
    pub fn default_plan(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            n_grid_list: vec![3, 4, 5],
            n_list: vec![1e3, 1e5, 1e7],
            coverage_reps: default_reps(),
            alpha: default_alpha(),
            seeds: default_seeds(),
            k_const: default_k(),
            prior: PriorChoice::default(),
            truth: TruthField::default(),
            out_dir: out_dir.into(),
            max_cells: default_max_cells(),
            tv_samples: default_tv_samples(),
            tv_cells: default_tv_cells(),
            chain_steps: default_chain_steps(),
            record_wall_time: false,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: Self = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn n_cells(&self) -> usize {
        self.n_grid_list.len() * self.n_list.len() * self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n_grid_list.is_empty() {
            return bad("n_grid_list is empty");
        }
        if self.n_list.is_empty() {
            return bad("n_list is empty");
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty");
        }
        if self.n_grid_list.iter().any(|&n| n < 2) {
            return bad("grid sizes must be at least 2");
        }
        if self.n_list.iter().any(|&n| !(n > 0.0) || !n.is_finite()) {
            return bad("noise parameters must be positive and finite");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.k_const > 0.0) {
            return bad("k_const must be positive");
        }
        if self.coverage_reps == 0 {
            return bad("coverage_reps must be positive");
        }
        if self.n_cells() > self.max_cells {
            return Err(Error::InvalidArgument(format!(
                "plan has {} cells, above max_cells = {}",
                self.n_cells(),
                self.max_cells
            )));
        }
        Ok(())
    }

    fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.n_cells());
        for &n_grid in &self.n_grid_list {
            for (n_index, &n) in self.n_list.iter().enumerate() {
                for &seed in &self.seeds {
                    out.push(Cell {
                        n_grid,
                        n_index,
                        n,
                        seed,
                        cell_seed: derive_seed(derive_seed(seed, n_grid as u64), n.to_bits()),
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    n_grid: usize,
    n_index: usize,
    n: f64,
    seed: u64,
    cell_seed: u64,
}

impl Cell {
    fn file_name(&self) -> String {
        format!("cell_N{}_n{}_s{}.json", self.n_grid, self.n_index, self.seed)
    }
}

/// One `(N, n, seed)` cell. Flat so that it maps to one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub schema_version: u32,
    pub n_grid: usize,
    pub d: usize,
    pub n: f64,
    pub seed: u64,
    pub cell_seed: u64,
    pub delta_n_paper: f64,
    pub delta_n_general: f64,
    pub degenerate_log: bool,
    pub tv_estimate: Option<f64>,
    pub tv_stderr: Option<f64>,
    pub tv_method: Option<String>,
    pub coverage_alpha: f64,
    pub coverage_reps: usize,
    pub coverage_hits: Option<usize>,
    pub coverage: Option<f64>,
    pub coverage_ci: Option<f64>,
    pub k_d: f64,
    pub eps_n: f64,
    pub mass_outside_m1: Option<f64>,
    pub mass_outside_m10: Option<f64>,
    pub mass_outside_m100: Option<f64>,
    pub sampler_acceptance: Option<f64>,
    pub posterior_tail: Option<f64>,
    pub gaussian_tail: Option<f64>,
    pub error: Option<String>,
    pub wall_time: Option<f64>,
}

impl SweepRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

fn run_cell(plan: &SweepPlan, cell: Cell) -> SweepRecord {
    let start = Instant::now();
    let grid_d = (cell.n_grid - 1) * (cell.n_grid - 1);
    let paper = delta_n(grid_d, cell.n, plan.k_const, DeltaVariant::PaperThm4);
    let general = delta_n(grid_d, cell.n, plan.k_const, DeltaVariant::General);
    let k_d = k_of_d(grid_d, plan.k_const);
    let mut rec = SweepRecord {
        schema_version: SCHEMA_VERSION,
        n_grid: cell.n_grid,
        d: grid_d,
        n: cell.n,
        seed: cell.seed,
        cell_seed: cell.cell_seed,
        delta_n_paper: paper.map(|v| v.value).unwrap_or(f64::NAN),
        delta_n_general: general.map(|v| v.value).unwrap_or(f64::NAN),
        degenerate_log: grid_d == 1,
        tv_estimate: None,
        tv_stderr: None,
        tv_method: None,
        coverage_alpha: plan.alpha,
        coverage_reps: plan.coverage_reps,
        coverage_hits: None,
        coverage: None,
        coverage_ci: None,
        k_d,
        eps_n: k_d / cell.n.sqrt(),
        mass_outside_m1: None,
        mass_outside_m10: None,
        mass_outside_m100: None,
        sampler_acceptance: None,
        posterior_tail: None,
        gaussian_tail: None,
        error: None,
        wall_time: None,
    };
    if let Err((stage, e)) = fill_cell(plan, cell, &mut rec) {
        log::warn!("cell N={} n={} seed={} failed at {stage}: {e}", cell.n_grid, cell.n, cell.seed);
        rec.error = Some(format!("{stage}: {e}"));
    }
    if plan.record_wall_time {
        rec.wall_time = Some(start.elapsed().as_secs_f64());
    }
    rec
}

fn fill_cell(plan: &SweepPlan, cell: Cell, rec: &mut SweepRecord) -> std::result::Result<(), (&'static str, Error)> {
    let tag = |stage: &'static str| move |e: Error| (stage, e);
    let model = MediumProblem::with_defaults(cell.n_grid).map_err(tag("setup"))?;
    let d = model.grid.d();
    let prior = match plan.prior {
        PriorChoice::Uniform => PriorSpec::uniform(model.bounds, d),
        PriorChoice::TruncatedNormal => PriorSpec::truncated_normal(model.bounds, d),
    };
    let q0 = plan.truth.values(&model.grid, model.bounds).map_err(tag("setup"))?;
    let spec = PosteriorSpec::synthesize(&model, prior, q0.clone(), cell.n, derive_seed(cell.cell_seed, 1))
        .map_err(tag("data"))?;
    let approx = spec.gaussian_approx().map_err(tag("gaussian-approx"))?;

    let tv = if d == 1 {
        tv_grid(&spec, &approx, plan.tv_cells)
    } else {
        tv_importance(&spec, &approx, plan.tv_samples, derive_seed(cell.cell_seed, 2))
    }
    .map_err(tag("tv"))?;
    rec.tv_estimate = Some(tv.value);
    rec.tv_stderr = Some(tv.std_err);
    rec.tv_method = Some(if d == 1 { "grid" } else { "importance" }.into());

    let cov = coverage_replications(
        &model,
        prior,
        &q0,
        cell.n,
        plan.alpha,
        plan.coverage_reps,
        derive_seed(cell.cell_seed, 3),
        CredibleSet::Ellipsoid,
    )
    .map_err(tag("coverage"))?;
    rec.coverage_hits = Some(cov.hits);
    rec.coverage = Some(cov.coverage);
    rec.coverage_ci = Some(cov.ci_halfwidth);

    let chain = posterior_chain(&spec, &approx, plan.chain_steps, derive_seed(cell.cell_seed, 4))
        .map_err(tag("sampler"))?;
    rec.sampler_acceptance = Some(chain.acceptance_rate);
    let masses = contraction_probe(&chain, &q0, cell.n, plan.k_const, &CONTRACTION_M);
    rec.mass_outside_m1 = Some(masses[0].mass_outside);
    rec.mass_outside_m10 = Some(masses[1].mass_outside);
    rec.mass_outside_m100 = Some(masses[2].mass_outside);
    let tail = tail_mass_probe(&chain, &approx, &q0, cell.n, plan.k_const).map_err(tag("tail"))?;
    rec.posterior_tail = Some(tail.posterior_tail);
    rec.gaussian_tail = Some(tail.gaussian_tail);
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// In plan order: grid size, then noise parameter, then seed.
    pub records: Vec<SweepRecord>,
    pub computed: usize,
    pub skipped: usize,
}

impl SweepOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.records.iter().all(SweepRecord::succeeded)
    }
}

pub fn cells_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("cells")
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Worker count from `BVM_LAB_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs every cell of the plan not already stored under `out_dir/cells`.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepOutcome> {
    plan.validate()?;
    let dir = cells_dir(&plan.out_dir);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cells = plan.cells();
    let existing: Vec<Option<SweepRecord>> = cells
        .iter()
        .map(|c| {
            let path = dir.join(c.file_name());
            let text = std::fs::read_to_string(&path).ok()?;
            serde_json::from_str::<SweepRecord>(&text)
                .ok()
                .filter(|r| r.schema_version == SCHEMA_VERSION && r.cell_seed == c.cell_seed)
        })
        .collect();
    let todo: Vec<Cell> = cells
        .iter()
        .zip(&existing)
        .filter(|(_, e)| e.is_none())
        .map(|(c, _)| *c)
        .collect();
    let skipped = cells.len() - todo.len();
    log::info!("sweep: {} cells to compute, {skipped} already on disk", todo.len());

    let compute = || -> Vec<SweepRecord> { todo.par_iter().map(|&c| run_cell(plan, c)).collect() };
    let fresh = match thread_cap() {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Internal(e.to_string()))?
            .install(compute),
        None => compute(),
    };
    for (cell, rec) in todo.iter().zip(&fresh) {
        write_atomic(&dir.join(cell.file_name()), &serde_json::to_string_pretty(rec)?)?;
    }
    let mut fresh_iter = fresh.into_iter();
    let records = existing
        .into_iter()
        .map(|e| e.unwrap_or_else(|| fresh_iter.next().expect("one fresh record per missing cell")))
        .collect();
    Ok(SweepOutcome {
        records,
        computed: todo.len(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub n_records: usize,
    pub n_failed: usize,
    /// Spearman correlation of TV estimates with `delta_n_paper`.
    pub spearman_tv_delta_paper: Option<f64>,
    pub spearman_tv_delta_general: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub summary: SweepSummary,
    pub records: Vec<SweepRecord>,
}

pub fn summarize(records: &[SweepRecord]) -> SweepSummary {
    let ok: Vec<&SweepRecord> = records
        .iter()
        .filter(|r| r.tv_estimate.is_some() && !r.degenerate_log)
        .collect();
    let tv: Vec<f64> = ok.iter().filter_map(|r| r.tv_estimate).collect();
    let corr = |f: fn(&SweepRecord) -> f64| {
        (ok.len() >= 3).then(|| spearman(&tv, &ok.iter().map(|r| f(r)).collect::<Vec<_>>()))
    };
    SweepSummary {
        n_records: records.len(),
        n_failed: records.iter().filter(|r| !r.succeeded()).count(),
        spearman_tv_delta_paper: corr(|r| r.delta_n_paper),
        spearman_tv_delta_general: corr(|r| r.delta_n_general),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub plots: Vec<PathBuf>,
}

pub fn write_records_csv(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes `records.csv`, `records.json` and `plots/*.svg` under `out_dir`.
pub fn emit_report(records: &[SweepRecord], out_dir: &Path) -> Result<ReportPaths> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to report".into()));
    }
    let plots_dir = out_dir.join("plots");
    std::fs::create_dir_all(&plots_dir).map_err(|e| Error::io(&plots_dir, e))?;
    let csv_path = out_dir.join("records.csv");
    write_records_csv(&csv_path, records)?;
    let json_path = out_dir.join("records.json");
    let report = SweepReport {
        schema_version: SCHEMA_VERSION,
        summary: summarize(records),
        records: records.to_vec(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;

    let by_d = |y: fn(&SweepRecord) -> Option<f64>, x: fn(&SweepRecord) -> f64| -> Vec<Series> {
        let mut ds: Vec<usize> = records.iter().map(|r| r.d).collect();
        ds.sort_unstable();
        ds.dedup();
        ds.into_iter()
            .map(|d| Series {
                label: format!("d = {d}"),
                points: records
                    .iter()
                    .filter(|r| r.d == d)
                    .filter_map(|r| y(r).map(|v| (x(r), v)))
                    .collect(),
            })
            .collect()
    };
    let plots = [
        (
            "tv_vs_n.svg",
            Plot {
                title: "TV distance vs n",
                x_label: "n",
                y_label: "TV estimate",
                log_x: true,
                log_y: true,
                series: by_d(|r| r.tv_estimate, |r| r.n),
            },
        ),
        (
            "tv_vs_delta.svg",
            Plot {
                title: "TV distance vs delta_n (paper variant)",
                x_label: "delta_n",
                y_label: "TV estimate",
                log_x: true,
                log_y: true,
                series: by_d(|r| r.tv_estimate, |r| r.delta_n_paper),
            },
        ),
        (
            "coverage_vs_n.svg",
            Plot {
                title: "Credible set coverage vs n",
                x_label: "n",
                y_label: "coverage",
                log_x: true,
                log_y: false,
                series: by_d(|r| r.coverage, |r| r.n),
            },
        ),
        (
            "contraction_vs_n.svg",
            Plot {
                title: "Posterior mass outside M eps_n (M = 1) vs n",
                x_label: "n",
                y_label: "mass outside",
                log_x: true,
                log_y: false,
                series: by_d(|r| r.mass_outside_m1, |r| r.n),
            },
        ),
    ];
    let mut paths = Vec::new();
    for (name, plot) in plots {
        let path = plots_dir.join(name);
        std::fs::write(&path, plot.render()).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(ReportPaths {
        csv: csv_path,
        json: json_path,
        plots: paths,
    })
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

struct Plot {
    title: &'static str,
    x_label: &'static str,
    y_label: &'static str,
    log_x: bool,
    log_y: bool,
    series: Vec<Series>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Plot {
    fn render(&self) -> String {
        let (w, h) = (640.0, 420.0);
        let (left, right, top, bottom) = (70.0, 130.0, 40.0, 50.0);
        let tx = |v: f64| if self.log_x { v.log10() } else { v };
        let ty = |v: f64| if self.log_y { v.log10() } else { v };
        let keep = |&(x, y): &(f64, f64)| {
            x.is_finite() && y.is_finite() && (!self.log_x || x > 0.0) && (!self.log_y || y > 0.0)
        };
        let pts: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| s.points.iter().copied().filter(keep).map(|(x, y)| (tx(x), ty(y))).collect())
            .collect();
        let (x0, x1) = axis_range(pts.iter().flatten().map(|p| p.0));
        let (y0, y1) = axis_range(pts.iter().flatten().map(|p| p.1));
        let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
        let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, self.title);
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - left - right,
            h - top - bottom
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let xl = if self.log_x { format!("1e{xv:.1}") } else { format!("{xv:.3}") };
            let yl = if self.log_y { format!("1e{yv:.1}") } else { format!("{yv:.3}") };
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xl}</text>"#,
                px(xv),
                h - bottom + 16.0
            );
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yl}</text>"#, left - 6.0, py(yv) + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, left + (w - left - right) / 2.0, h - 12.0, self.x_label);
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            top + (h - top - bottom) / 2.0,
            top + (h - top - bottom) / 2.0,
            self.y_label
        );
        for (k, (series, points)) in self.series.iter().zip(&pts).enumerate() {
            let color = COLORS[k % COLORS.len()];
            if points.len() > 1 {
                let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, path.join(" "));
            }
            for &(x, y) in points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#, px(x), py(y));
            }
            let ly = top + 14.0 + 18.0 * k as f64;
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{ly:.1}" r="4" fill="{color}"/>"#, w - right + 16.0);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, w - right + 26.0, ly + 4.0, series.label);
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_values() {
        let p = delta_n(4, 1e6, 1.0, DeltaVariant::PaperThm4).unwrap();
        assert!((p.value - 64.0 * 4f64.ln() / 1000.0).abs() < 1e-12);
        assert!((p.value - 0.08872).abs() < 1e-5);
        let g = delta_n(2, 4.0, 1.0, DeltaVariant::General).unwrap();
        assert!((g.value - 0.5f64.sqrt() * 16.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g.value / 7.844 - 1.0).abs() < 1e-3);
        let one = delta_n(1, 10.0, 1.0, DeltaVariant::General).unwrap();
        assert!(one.degenerate_log && one.value == 0.0);
        assert!(delta_n(4, 0.0, 1.0, DeltaVariant::General).is_err());
    }

    #[test]
    fn general_delta_increases_with_dimension() {
        for d in 3..50 {
            let a = delta_n(d, 1.0, 1.0, DeltaVariant::General).unwrap().value;
            let b = delta_n(d + 1, 1.0, 1.0, DeltaVariant::General).unwrap().value;
            assert!(b > a);
        }
    }

    #[test]
    fn plan_validation() {
        let mut plan = SweepPlan::default_plan("/tmp/x");
        plan.validate().unwrap();
        assert_eq!(plan.n_cells(), 9);
        plan.n_list.clear();
        assert!(plan.validate().is_err());
        let mut plan = SweepPlan::default_plan("/tmp/x");
        plan.max_cells = 8;
        assert!(plan.validate().is_err());
        let mut plan = SweepPlan::default_plan("/tmp/x");
        plan.seeds = vec![1, 1];
        assert!(plan.validate().is_err());
    }

    #[test]
    fn plan_json_defaults() {
        let plan: SweepPlan =
            serde_json::from_str(r#"{"n_grid_list":[3],"n_list":[1e3],"out_dir":"out"}"#).unwrap();
        assert_eq!(plan.coverage_reps, 50);
        assert_eq!(plan.seeds, vec![0]);
        assert_eq!(plan.truth, TruthField::Sinusoid);
        assert!(!plan.record_wall_time);
        assert!(serde_json::from_str::<SweepPlan>(r#"{"n_grid_list":[3],"n_list":[1],"out_dir":"o","bogus":1}"#).is_err());
    }

    #[test]
    fn cell_seeds_are_distinct() {
        let mut plan = SweepPlan::default_plan("/tmp/x");
        plan.seeds = vec![0, 1];
        let mut seeds: Vec<u64> = plan.cells().iter().map(|c| c.cell_seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), plan.n_cells());
    }

    #[test]
    fn truth_field_fits_default_box() {
        let grid = GridSpec::new(4).unwrap();
        let q = TruthField::Sinusoid.values(&grid, Bounds::default()).unwrap();
        assert!(q.iter().all(|&v| (3.0..=5.0).contains(&v)));
        assert!((q[grid.index(2, 2)] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_plots_render() {
        let plot = Plot {
            title: "t",
            x_label: "x",
            y_label: "y",
            log_x: true,
            log_y: true,
            series: vec![Series {
                label: "d = 4".into(),
                points: vec![(1e3, 0.2)],
            }],
        };
        let svg = plot.render();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(!svg.contains("NaN"));
    }
}

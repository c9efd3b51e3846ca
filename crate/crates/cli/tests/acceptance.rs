//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use bvm_core::audit::{audit_linearization, audit_stability};
use bvm_core::diagnostics::{
    contraction_probe, credible_coverage, posterior_chain, tv_grid, tv_importance, CredibleSet,
};
use bvm_core::forward::{assemble, laplacian_matrix, solve, Bounds, GridSpec, MediumField, ProblemData};
use bvm_core::jacobian::sigma_growth_fit;
use bvm_core::posterior::{calibrated_constant, expansion_gap, k_of_d};
use bvm_core::stats::{rng_from_seed, uniform_in_ball, unit_direction};
use bvm_core::sweep::{run_sweep, summarize, SweepPlan, TruthField};
use bvm_core::{
    eigenvalues_of_a, jacobian, spectral_report, ForwardMap, LinearMap, MediumProblem, PosteriorSpec, PriorSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn sinusoid(model: &MediumProblem) -> Vec<f64> {
    TruthField::Sinusoid.values(&model.grid, model.bounds).unwrap()
}

fn c1_forward() -> Outcome {
    let bounds = Bounds::new(0.1, 10.0).map_err(err)?;
    // constant solution u = 2 with q = 3, f = 6, g = 2
    let mut const_err: f64 = 0.0;
    for n in [4, 8, 16, 32] {
        let grid = GridSpec::new(n).map_err(err)?;
        let q = MediumField::constant(&grid, 3.0, bounds).map_err(err)?;
        let data = ProblemData::constant(&grid, 6.0, 2.0);
        let sys = assemble(&grid, &q, &data).map_err(err)?;
        let u = solve(&sys, &data).map_err(err)?;
        for v in &u.u {
            const_err = const_err.max((v - 2.0).abs());
        }
    }
    // manufactured u* = sin(πx) sin(πy) + x + 2y + 1, q = 1 + xy
    let pi = std::f64::consts::PI;
    let exact = |x: f64, y: f64| (pi * x).sin() * (pi * y).sin() + x + 2.0 * y + 1.0;
    let qf = |x: f64, y: f64| 1.0 + x * y;
    let rhs = move |x: f64, y: f64| 2.0 * pi * pi * (pi * x).sin() * (pi * y).sin() + qf(x, y) * exact(x, y);
    let mut errs = Vec::new();
    for n in [8, 16, 32] {
        let grid = GridSpec::new(n).map_err(err)?;
        let q = MediumField::from_fn(&grid, bounds, qf).map_err(err)?;
        let data = ProblemData::from_fns(&grid, rhs, exact);
        let sys = assemble(&grid, &q, &data).map_err(err)?;
        let u = solve(&sys, &data).map_err(err)?;
        let mut e: f64 = 0.0;
        for (k, v) in u.u.iter().enumerate() {
            let (i, j) = grid.node(k);
            let (x, y) = grid.coords(i, j);
            e = e.max((v - exact(x, y)).abs());
        }
        errs.push(e);
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    check(
        const_err <= 1e-10 && orders.iter().all(|o| (1.8..=2.2).contains(o)),
        format!("constant error {const_err:.2e}, errors {errs:.3?}, orders {orders:.3?}"),
    )
}

fn c2_spectrum() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 2..=16 {
        let grid = GridSpec::new(n).map_err(err)?;
        let mut numeric: Vec<f64> = laplacian_matrix(&grid).symmetric_eigenvalues().iter().copied().collect();
        numeric.sort_by(f64::total_cmp);
        for (a, b) in numeric.iter().zip(eigenvalues_of_a(&grid)) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-8, format!("max eigenvalue error {worst:.2e} over N = 2..16"))
}

fn c3_jacobian() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for n in [3, 4, 8] {
        let model = MediumProblem::with_defaults(n).map_err(err)?;
        let d = model.dim();
        let mut rng = rng_from_seed(300 + n as u64);
        for _ in 0..20 {
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..9.5)).collect();
            let p = unit_direction(&mut rng, d);
            let jp = model.jacobian(&q).map_err(err)? * DVector::from_column_slice(&p);
            let eps = 1e-4;
            let plus: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a + eps * b).collect();
            let minus: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a - eps * b).collect();
            let fd = (model.forward(&plus).map_err(err)? - model.forward(&minus).map_err(err)?) / (2.0 * eps);
            worst = worst.max((&jp - fd).norm() / jp.norm());
            pairs += 1;
        }
    }
    check(worst <= 1e-6, format!("{pairs} pairs, max relative error {worst:.2e}"))
}

fn c4_linearization() -> Outcome {
    let model = MediumProblem::with_defaults(4).map_err(err)?;
    let base = sinusoid(&model);
    let radii = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
    let rep = audit_linearization(&model, model.bounds, &base, &radii, 16, 4).map_err(err)?;
    let slope = rep.a3_slope.ok_or("no slope fitted")?;
    check((1.9..=2.1).contains(&slope), format!("d = 9, residual slope {slope:.4}"))
}

fn c5_growth() -> Outcome {
    let mut reports = Vec::new();
    for n in [4, 6, 8, 12, 16] {
        let model = MediumProblem::with_defaults(n).map_err(err)?;
        let q = sinusoid(&model);
        let (sys, u) = model.solve(&q).map_err(err)?;
        reports.push(spectral_report(&jacobian(&sys, &u).map_err(err)?).map_err(err)?);
    }
    let fit = sigma_growth_fit(&reports).map_err(err)?;
    let sig: Vec<f64> = reports.iter().map(|r| r.sigma_max_inv).collect();
    check(
        (0.6..=1.4).contains(&fit.slope),
        format!("slope {:.4}, σ_max(J^-1) = {sig:.3?}", fit.slope),
    )
}

fn c6_tv_decay() -> Outcome {
    let model = MediumProblem::with_defaults(2).map_err(err)?;
    let prior = PriorSpec::uniform(model.bounds, 1);
    let mut grid_vals = Vec::new();
    let mut agree = true;
    let mut lines = Vec::new();
    for n in [1e2, 1e4, 1e6] {
        let spec = PosteriorSpec::synthesize(model.clone(), prior, vec![3.0], n, 6).map_err(err)?;
        let approx = spec.gaussian_approx().map_err(err)?;
        let g = tv_grid(&spec, &approx, 20_000).map_err(err)?;
        let i = tv_importance(&spec, &approx, 400_000, 61).map_err(err)?;
        let se = (g.std_err.powi(2) + i.std_err.powi(2)).sqrt();
        agree &= (g.value - i.value).abs() <= 3.0 * se;
        lines.push(format!("n {n:e}: grid {:.5} ± {:.1e}, is {:.5} ± {:.1e}", g.value, g.std_err, i.value, i.std_err));
        grid_vals.push(g.value);
    }
    let decreasing = grid_vals.windows(2).all(|w| w[1] < w[0]);
    check(
        decreasing && grid_vals[2] <= 0.05 && agree,
        format!("{}; decreasing {decreasing}, agree {agree}", lines.join("; ")),
    )
}

fn c7_association() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let plan = SweepPlan::default_plan(dir.path());
    let outcome = run_sweep(&plan).map_err(err)?;
    let s = summarize(&outcome.records);
    let rho = s.spearman_tv_delta_paper.ok_or("too few successful cells")?;
    let failed: Vec<String> = outcome
        .records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("(d {}, n {:e}): {e}", r.d, r.n)))
        .collect();
    check(
        rho > 0.0,
        format!(
            "{}/{} cells ok, spearman(tv, δ_paper) {rho:.3}, spearman(tv, δ_general) {:?}{}",
            s.n_records - s.n_failed,
            s.n_records,
            s.spearman_tv_delta_general,
            if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
        ),
    )
}

fn c8_expansion() -> Outcome {
    let model = MediumProblem::with_defaults(3).map_err(err)?;
    let d = model.dim();
    let q0 = sinusoid(&model);
    let audit = audit_stability(&model, model.bounds, 200, 8).map_err(err)?;
    let c = calibrated_constant(audit.a3_ratio);
    let k_d = k_of_d(d, 1.0);
    let mut gaps = Vec::new();
    let mut holds = true;
    let mut lines = Vec::new();
    for n in [1e6, 1e8] {
        let spec = PosteriorSpec::synthesize(model.clone(), PriorSpec::uniform(model.bounds, d), q0.clone(), n, 80)
            .map_err(err)?;
        let approx = spec.gaussian_approx().map_err(err)?;
        let mut rng = rng_from_seed(81);
        let us: Vec<Vec<f64>> = (0..200).map(|_| uniform_in_ball(&mut rng, d, k_d)).collect();
        let g = expansion_gap(&spec, &approx, &us, c, k_d).map_err(err)?;
        holds &= g.holds;
        lines.push(format!("n {n:e}: gap {:.3e} <= {:.3e}", g.max_gap, g.bound_rhs));
        gaps.push(g.max_gap);
    }
    let ratio = gaps[0] / gaps[1];
    check(
        holds && (5.0..=20.0).contains(&ratio),
        format!("C {c:.3}, K(d) {k_d:.3}, {}; ratio {ratio:.3}", lines.join(", ")),
    )
}

fn c9_coverage() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    // exactly Gaussian oracle: linear map, box far wider than the posterior
    let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.3, 1.5, 0.2, 0.0, -0.4, 1.0]);
    let lin = LinearMap::new(a, DVector::from_element(3, 1.0)).map_err(err)?;
    let prior = PriorSpec::uniform(Bounds::new(-50.0, 50.0).map_err(err)?, 3);
    for alpha in [0.1, 0.5] {
        let r = credible_coverage(&lin, prior, &[0.5, -1.0, 2.0], 1e2, alpha, 2000, 90, CredibleSet::Ellipsoid)
            .map_err(err)?;
        let se = r.nominal_std_err();
        let hit = (r.coverage - (1.0 - alpha)).abs() <= 2.0 * se;
        ok &= hit;
        lines.push(format!("linear α {alpha}: {:.4} (2se {:.4})", r.coverage, 2.0 * se));
    }
    let model = MediumProblem::with_defaults(3).map_err(err)?;
    let q0 = sinusoid(&model);
    let prior = PriorSpec::uniform(model.bounds, 4);
    let r = credible_coverage(&model, prior, &q0, 1e6, 0.1, 500, 91, CredibleSet::Ellipsoid).map_err(err)?;
    ok &= (r.coverage - 0.9).abs() <= 0.06;
    lines.push(format!("medium d 4 n 1e6 ellipsoid: {:.4}", r.coverage));
    match credible_coverage(&model, prior, &q0, 1e6, 0.1, 500, 92, CredibleSet::Hpd { n_steps: 2000 }) {
        Ok(h) => lines.push(format!("hpd (reported only): {:.4}", h.coverage)),
        Err(e) => lines.push(format!("hpd (reported only) failed: {e}")),
    }
    check(ok, lines.join("; "))
}

fn c10_contraction() -> Outcome {
    let model = MediumProblem::with_defaults(3).map_err(err)?;
    let q0 = sinusoid(&model);
    let prior = PriorSpec::uniform(model.bounds, 4);
    let ms = [1.0, 10.0, 100.0];
    let mut m1 = Vec::new();
    let mut lines = Vec::new();
    for n in [1e3, 1e4, 1e5, 1e6] {
        let spec = PosteriorSpec::synthesize(model.clone(), prior, q0.clone(), n, 100).map_err(err)?;
        let approx = spec.gaussian_approx().map_err(err)?;
        let chain = posterior_chain(&spec, &approx, 20_000, 101).map_err(err)?;
        let probe = contraction_probe(&chain, &q0, n, 1.0, &ms);
        let masses: Vec<f64> = probe.iter().map(|p| p.mass_outside).collect();
        lines.push(format!("n {n:e}: {masses:.4?}"));
        m1.push(masses[0]);
    }
    check(
        m1.windows(2).all(|w| w[1] <= w[0]),
        format!("mass outside M·n^-1/2·K(d) for M = {ms:?}: {}", lines.join(", ")),
    )
}

fn run_cli(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bvm-lab"))
        .args(args)
        .current_dir(cwd)
        .env("BVM_LAB_THREADS", "2")
        .output()
        .map_err(err)?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    if !out.stdout.is_empty() {
        std::fs::write(cwd.join(format!("{}.stdout", args[0])), &out.stdout).map_err(err)?;
    }
    Ok(())
}

fn cli_session(dir: &Path) -> Result<(), String> {
    std::fs::write(
        dir.join("plan.json"),
        r#"{"n_grid_list":[2,3],"n_list":[1e3,1e5],"coverage_reps":20,"tv_samples":20000,"chain_steps":4000,"out_dir":"sweep"}"#,
    )
    .map_err(err)?;
    let runs: &[&[&str]] = &[
        &["solve", "--n-grid", "4"],
        &["spectra", "--n-grid", "3,4,5", "--out", "spectra.json"],
        &["audit", "--n-grid", "3", "--pairs", "30", "--seed", "1", "--out", "audit.json"],
        &["posterior", "--n-grid", "3", "--n", "1e4", "--seed", "2", "--out", "spec.json"],
        &["sample", "--spec", "spec.json", "--kind", "rwm", "--steps", "5000", "--seed", "3", "--out", "rwm.bin"],
        &["sample", "--spec", "spec.json", "--kind", "independence", "--steps", "5000", "--seed", "3", "--out", "ind.bin"],
        &["tv", "--spec", "spec.json", "--method", "importance", "--samples", "20000", "--seed", "4", "--out", "tv.json"],
        &["coverage", "--n-grid", "2", "--n", "1e4", "--reps", "100", "--seed", "5", "--out", "coverage.json"],
        &["contraction", "--spec", "spec.json", "--chain", "ind.bin", "--out", "contraction.json"],
        &["sweep", "--plan", "plan.json"],
    ];
    for args in runs {
        run_cli(dir, args)?;
    }
    Ok(())
}

fn collect_files(root: &Path, rel: &Path, out: &mut Vec<(String, Vec<u8>)>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(root.join(rel))?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let r = rel.join(e.file_name());
        if e.file_type()?.is_dir() {
            collect_files(root, &r, out)?;
        } else {
            out.push((r.display().to_string(), std::fs::read(root.join(&r))?));
        }
    }
    Ok(())
}

fn c11_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    cli_session(a.path())?;
    cli_session(b.path())?;
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    collect_files(a.path(), Path::new(""), &mut fa).map_err(err)?;
    collect_files(b.path(), Path::new(""), &mut fb).map_err(err)?;
    let names: Vec<&String> = fa.iter().map(|(n, _)| n).collect();
    let differing: Vec<&String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| &x.0)
        .collect();
    check(
        fa.len() == fb.len() && differing.is_empty(),
        format!("{} files compared, differing {differing:?}; files {names:?}", fa.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 forward solver exactness", c1_forward),
        ("2 spectral oracle", c2_spectrum),
        ("3 jacobian vs finite differences", c3_jacobian),
        ("4 linearisation residual slope", c4_linearization),
        ("5 ill-posedness growth", c5_growth),
        ("6 tv decay at d = 1", c6_tv_decay),
        ("7 tv vs delta association", c7_association),
        ("8 expansion gap", c8_expansion),
        ("9 coverage", c9_coverage),
        ("10 contraction", c10_contraction),
        ("11 cli determinism", c11_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let res = f();
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

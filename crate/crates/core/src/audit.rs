//! Randomised audits of the stability and linearisation properties of a
//! forward map over the parameter box.
//!
//! The audits measure empirical constants on sampled points. They never
//! establish the uniform bounds themselves; every report carries
//! `sampled_not_exhaustive = true`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Bounds;
use crate::model::ForwardMap;
use crate::stats::{linear_fit, norm, rng_from_seed, unit_direction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusResidual {
    pub radius: f64,
    /// Largest `|G(q0 + t p) - G(q0) - t ∇G(q0) p|` over accepted directions.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub d: usize,
    pub n_pairs: usize,
    /// `max |G(q1) - G(q2)| / |q1 - q2|` (Lipschitz constant of `G`).
    /// Only set by the pair audit.
    pub a2_lower: Option<f64>,
    /// `max |q1 - q2| / (d |G(q1) - G(q2)|)`.
    pub a2_upper: Option<f64>,
    /// `max |G(q1) - G(q2) - ∇G(q2)(q1 - q2)| / |q1 - q2|^2`.
    pub a3_ratio: f64,
    /// Log-log slope of the linearisation residual against the step length.
    pub a3_slope: Option<f64>,
    /// Degenerate draws that had to be replaced.
    pub resampled: usize,
    pub radii: Vec<RadiusResidual>,
    pub sampled_not_exhaustive: bool,
}

struct PairStats {
    dq: f64,
    dg: f64,
    residual: f64,
}

fn pair_stats<G: ForwardMap>(model: &G, q1: &[f64], q2: &[f64]) -> Result<PairStats> {
    let g1 = model.forward(q1)?;
    let g2 = model.forward(q2)?;
    let j2 = model.jacobian(q2)?;
    let dq = nalgebra::DVector::from_iterator(q1.len(), q1.iter().zip(q2).map(|(a, b)| a - b));
    let dg = &g1 - &g2;
    let lin = &dg - j2 * &dq;
    Ok(PairStats {
        dq: dq.norm(),
        dg: dg.norm(),
        residual: lin.norm(),
    })
}

/// Samples `n_pairs` pairs uniformly from the box and records the two-sided
/// stability ratios and the linearisation remainder.
pub fn audit_stability<G: ForwardMap>(
    model: &G,
    bounds: Bounds,
    n_pairs: usize,
    seed: u64,
) -> Result<AuditReport> {
    if n_pairs < 10 {
        return Err(Error::InvalidArgument(format!(
            "stability audit needs at least 10 pairs, got {n_pairs}"
        )));
    }
    let d = model.dim();
    let mut rng = rng_from_seed(seed);
    let draw = |rng: &mut crate::stats::LabRng| -> Vec<f64> {
        (0..d)
            .map(|_| rng.random_range(bounds.lower..=bounds.upper))
            .collect()
    };
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut resampled = 0;
    while pairs.len() < n_pairs {
        let q1 = draw(&mut rng);
        let q2 = draw(&mut rng);
        let gap = norm(&q1.iter().zip(&q2).map(|(a, b)| a - b).collect::<Vec<_>>());
        if gap <= 1e-12 * bounds.width() {
            resampled += 1;
            continue;
        }
        pairs.push((q1, q2));
    }
    let stats: Vec<PairStats> = pairs
        .par_iter()
        .map(|(q1, q2)| pair_stats(model, q1, q2))
        .collect::<Result<_>>()?;

    let mut a2_lower: f64 = 0.0;
    let mut a2_upper: f64 = 0.0;
    let mut a3_ratio: f64 = 0.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in &stats {
        a2_lower = a2_lower.max(s.dg / s.dq);
        a2_upper = a2_upper.max(s.dq / (d as f64 * s.dg));
        a3_ratio = a3_ratio.max(s.residual / (s.dq * s.dq));
        if s.residual > 0.0 {
            xs.push(s.dq.ln());
            ys.push(s.residual.ln());
        }
    }
    let spread = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - xs.iter().copied().fold(f64::INFINITY, f64::min);
    let a3_slope = (xs.len() >= 3 && spread > 1e-6).then(|| linear_fit(&xs, &ys).0);
    Ok(AuditReport {
        d,
        n_pairs,
        a2_lower: Some(a2_lower),
        a2_upper: Some(a2_upper),
        a3_ratio,
        a3_slope,
        resampled,
        radii: Vec::new(),
        sampled_not_exhaustive: true,
    })
}

/// Measures `r(t) = |G(q0 + t p) - G(q0) - t ∇G(q0) p|` along random unit
/// directions `p` and fits the slope of `log r` against `log t`.
///
/// Directions for which `q0 + t p` leaves the box at the largest radius are
/// rejected.
pub fn audit_linearization<G: ForwardMap>(
    model: &G,
    bounds: Bounds,
    base_q: &[f64],
    radii: &[f64],
    n_dirs: usize,
    seed: u64,
) -> Result<AuditReport> {
    let d = model.dim();
    crate::model::check_len(d, base_q)?;
    bounds.check(base_q)?;
    if radii.is_empty() || radii.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidArgument("radii must be positive".into()));
    }
    if n_dirs == 0 {
        return Err(Error::InvalidArgument("need at least one direction".into()));
    }
    let t_max = radii.iter().copied().fold(0.0, f64::max);
    let mut rng = rng_from_seed(seed);
    let mut dirs = Vec::with_capacity(n_dirs);
    let mut rejected = 0;
    let max_attempts = 200 * n_dirs;
    while dirs.len() < n_dirs && dirs.len() + rejected < max_attempts {
        let p = unit_direction(&mut rng, d);
        if p.iter().zip(base_q).all(|(pi, qi)| bounds.contains(qi + t_max * pi)) {
            dirs.push(p);
        } else {
            rejected += 1;
        }
    }
    if dirs.is_empty() {
        return Err(Error::Domain("base point too close to boundary".into()));
    }

    let g0 = model.forward(base_q)?;
    let j0 = model.jacobian(base_q)?;
    let evals: Vec<(usize, usize, f64)> = dirs
        .par_iter()
        .enumerate()
        .flat_map_iter(|(k, p)| {
            let g0 = &g0;
            let j0 = &j0;
            radii.iter().enumerate().map(move |(ri, &t)| {
                let q: Vec<f64> = base_q.iter().zip(p).map(|(a, b)| a + t * b).collect();
                let jp = j0 * nalgebra::DVector::from_column_slice(p);
                let r = model
                    .forward(&q)
                    .map(|g| (g - g0 - jp * t).norm())
                    .unwrap_or(f64::NAN);
                (k, ri, r)
            })
        })
        .collect();
    if evals.iter().any(|e| !e.2.is_finite()) {
        return Err(Error::Internal("forward solve failed during linearisation audit".into()));
    }

    let mut per_radius = vec![0.0f64; radii.len()];
    let mut a3_ratio: f64 = 0.0;
    for &(_, ri, r) in &evals {
        per_radius[ri] = per_radius[ri].max(r);
        a3_ratio = a3_ratio.max(r / (radii[ri] * radii[ri]));
    }
    let a3_slope = (radii.len() >= 2 && per_radius.iter().all(|&r| r > 0.0)).then(|| {
        let xs: Vec<f64> = radii.iter().map(|t| t.ln()).collect();
        let ys: Vec<f64> = per_radius.iter().map(|r| r.ln()).collect();
        linear_fit(&xs, &ys).0
    });
    Ok(AuditReport {
        d,
        n_pairs: dirs.len(),
        a2_lower: None,
        a2_upper: None,
        a3_ratio,
        a3_slope,
        resampled: rejected,
        radii: radii
            .iter()
            .zip(per_radius)
            .map(|(&radius, residual)| RadiusResidual { radius, residual })
            .collect(),
        sampled_not_exhaustive: true,
    })
}

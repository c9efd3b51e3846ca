//! Exact derivative of the medium forward map and its spectral diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardSolution, ForwardSystem};
use crate::stats::linear_fit;

/// Largest dimension for which dense spectral work is attempted.
pub const MAX_SPECTRAL_DIM: usize = 4096;

#[derive(Debug, Clone)]
pub struct JacobianMatrix {
    pub matrix: DMatrix<f64>,
    /// Coefficient at which the derivative was taken; empty for matrices
    /// built with [`JacobianMatrix::from_matrix`].
    pub at_q: Vec<f64>,
}

impl JacobianMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        Self {
            matrix,
            at_q: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, p: &[f64]) -> DVector<f64> {
        &self.matrix * DVector::from_column_slice(p)
    }

    /// `|J - J^T|_F / |J|_F`.
    pub fn asymmetry(&self) -> f64 {
        let norm = self.matrix.norm();
        if norm == 0.0 {
            0.0
        } else {
            (&self.matrix - self.matrix.transpose()).norm() / norm
        }
    }
}

/// `∇G(q) = -(h^-2 A + Q)^-1 diag(u_q)`, one cached-factor solve per column.
pub fn jacobian(sys: &ForwardSystem, u: &ForwardSolution) -> Result<JacobianMatrix> {
    let d = sys.grid().d();
    if u.u.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: u.u.len(),
        });
    }
    let mut j = DMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for (k, &uk) in u.u.iter().enumerate() {
        e.fill(0.0);
        e[k] = -uk;
        let col = sys.solve_rhs(&e);
        j.set_column(k, &DVector::from_vec(col));
    }
    Ok(JacobianMatrix {
        matrix: j,
        at_q: sys.q().to_vec(),
    })
}

/// Same derivative via an explicit dense inverse of `M`; used as a check.
pub fn jacobian_dense_inverse(sys: &ForwardSystem, u: &ForwardSolution) -> Result<JacobianMatrix> {
    let minv = sys
        .dense()
        .try_inverse()
        .ok_or_else(|| Error::Factorization("dense inverse failed".into()))?;
    let uq = DMatrix::from_diagonal(&u.to_dvector());
    Ok(JacobianMatrix {
        matrix: -(minv * uq),
        at_q: sys.q().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub d: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_min_inv: f64,
    pub sigma_max_inv: f64,
    pub asymmetry: f64,
}

fn extreme_singular_values(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let sv = m
        .clone()
        .try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Internal("SVD did not converge".into()))?
        .singular_values;
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sv.iter().copied().fold(0.0, f64::max);
    Ok((min, max))
}

/// Extreme singular values of `J` and, from an independent inversion, of `J^-1`.
pub fn spectral_report(j: &JacobianMatrix) -> Result<SpectralReport> {
    let d = j.dim();
    if d > MAX_SPECTRAL_DIM {
        return Err(Error::Unsupported(format!(
            "dense spectral analysis capped at d = {MAX_SPECTRAL_DIM}, got {d}"
        )));
    }
    if j.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("Jacobian has non-finite entries".into()));
    }
    let (sigma_min, sigma_max) = extreme_singular_values(&j.matrix)?;
    let inv = j
        .matrix
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned(f64::INFINITY))?;
    let (sigma_min_inv, sigma_max_inv) = extreme_singular_values(&inv)?;
    Ok(SpectralReport {
        d,
        sigma_min,
        sigma_max,
        sigma_min_inv,
        sigma_max_inv,
        asymmetry: j.asymmetry(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares fit of `log σ_max(J^-1)` against `log d`.
pub fn sigma_growth_fit(reports: &[SpectralReport]) -> Result<GrowthFit> {
    let mut ds: Vec<usize> = reports.iter().map(|r| r.d).collect();
    ds.sort_unstable();
    ds.dedup();
    if ds.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "growth fit needs at least 3 distinct dimensions, got {}",
            ds.len()
        )));
    }
    let xs: Vec<f64> = reports.iter().map(|r| (r.d as f64).ln()).collect();
    let ys: Vec<f64> = reports.iter().map(|r| r.sigma_max_inv.ln()).collect();
    let (slope, intercept) = linear_fit(&xs, &ys);
    Ok(GrowthFit { slope, intercept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{assemble, solve, Bounds, MediumField, ProblemData};
    use crate::forward::GridSpec;

    fn system(n: usize, q: f64, f: f64, g: f64) -> (ForwardSystem, ForwardSolution) {
        let grid = GridSpec::new(n).unwrap();
        let field = MediumField::constant(&grid, q, Bounds::default()).unwrap();
        let data = ProblemData::constant(&grid, f, g);
        let sys = assemble(&grid, &field, &data).unwrap();
        let u = solve(&sys, &data).unwrap();
        (sys, u)
    }

    #[test]
    fn scalar_jacobian_matches_hand_derivative() {
        let (sys, u) = system(2, 1.0, 1.0, 0.0);
        let j = jacobian(&sys, &u).unwrap();
        assert!((j.matrix[(0, 0)] + 1.0 / 289.0).abs() < 1e-16);
        let rep = spectral_report(&j).unwrap();
        assert!((rep.sigma_min - 1.0 / 289.0).abs() < 1e-15);
        assert!((rep.sigma_max - 1.0 / 289.0).abs() < 1e-15);
    }

    #[test]
    fn zero_direction_maps_to_zero() {
        let (sys, u) = system(4, 2.0, 1.0, 1.0);
        let j = jacobian(&sys, &u).unwrap();
        assert!(j.apply(&[0.0; 9]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_report() {
        let rep = spectral_report(&JacobianMatrix::from_matrix(DMatrix::identity(5, 5))).unwrap();
        assert!((rep.sigma_min - 1.0).abs() < 1e-14 && (rep.sigma_max - 1.0).abs() < 1e-14);
        assert_eq!(rep.asymmetry, 0.0);
    }

    #[test]
    fn inverse_singular_values_are_reciprocal() {
        let (sys, u) = system(6, 3.0, 1.0, 1.0);
        let rep = spectral_report(&jacobian(&sys, &u).unwrap()).unwrap();
        assert!((rep.sigma_min_inv * rep.sigma_max - 1.0).abs() < 1e-8);
        assert!((rep.sigma_max_inv * rep.sigma_min - 1.0).abs() < 1e-8);
    }

    #[test]
    fn columnwise_equals_dense_inverse() {
        let grid = GridSpec::new(8).unwrap();
        let field = MediumField::from_fn(&grid, Bounds::default(), |x, y| 1.0 + 4.0 * x * y).unwrap();
        let data = ProblemData::constant(&grid, 1.0, 1.0);
        let sys = assemble(&grid, &field, &data).unwrap();
        let u = solve(&sys, &data).unwrap();
        let a = jacobian(&sys, &u).unwrap();
        let b = jacobian_dense_inverse(&sys, &u).unwrap();
        assert!((a.matrix - b.matrix).abs().max() < 1e-10);
    }

    #[test]
    fn nonconstant_field_gives_asymmetric_jacobian() {
        let grid = GridSpec::new(5).unwrap();
        let data = ProblemData::from_fns(&grid, |x, y| 1.0 + x + 2.0 * y, |_, _| 1.0);
        let field = MediumField::from_fn(&grid, Bounds::default(), |x, y| 0.5 + 9.0 * x * y).unwrap();
        let sys = assemble(&grid, &field, &data).unwrap();
        let u = solve(&sys, &data).unwrap();
        assert!(jacobian(&sys, &u).unwrap().asymmetry() > 1e-6);
    }

    #[test]
    fn growth_fit_recovers_exponent() {
        let mk = |d: usize, s: f64| SpectralReport {
            d,
            sigma_min: 1.0,
            sigma_max: 1.0,
            sigma_min_inv: 1.0,
            sigma_max_inv: s,
            asymmetry: 0.0,
        };
        let lin: Vec<_> = [4, 9, 16, 25].iter().map(|&d| mk(d, d as f64)).collect();
        assert!((sigma_growth_fit(&lin).unwrap().slope - 1.0).abs() < 1e-12);
        let quad: Vec<_> = [4, 9, 16].iter().map(|&d| mk(d, (d * d) as f64)).collect();
        assert!((sigma_growth_fit(&quad).unwrap().slope - 2.0).abs() < 1e-12);
        assert!(sigma_growth_fit(&lin[..2]).is_err());
    }
}

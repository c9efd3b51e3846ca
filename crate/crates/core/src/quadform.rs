//! Tail probability `P(|X| > r)` for `X ~ N(m, C)` by Imhof's inversion of
//! the characteristic function of the quadratic form `|X|^2`.

use nalgebra::SymmetricEigen;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gaussian::MvNormal;

const TAIL_TOL: f64 = 1e-10;
const MAX_PANELS: usize = 20_000_000;

/// `P(|X| > radius)` for a Gaussian `X`.
pub fn gaussian_norm_tail(normal: &MvNormal, radius: f64) -> Result<f64> {
    if radius <= 0.0 {
        return Ok(1.0);
    }
    let d = normal.dim();
    if d == 1 {
        let sd = normal.cov()[(0, 0)].sqrt();
        let m = normal.mean()[0];
        let z = Normal::new(0.0, 1.0).unwrap();
        return Ok((z.cdf((-radius - m) / sd) + z.sf((radius - m) / sd)).clamp(0.0, 1.0));
    }
    let eig = SymmetricEigen::new(normal.cov().clone());
    let lmax = eig.eigenvalues.max();
    if !(lmax > 0.0) {
        return Err(Error::InvalidArgument("covariance has no positive eigenvalue".into()));
    }
    let lam: Vec<f64> = eig.eigenvalues.iter().map(|l| (l / lmax).max(1e-300)).collect();
    let proj = eig.eigenvectors.transpose() * normal.mean();
    // noncentralities in the eigenbasis, with λ normalised to max 1
    let nc: Vec<f64> = proj
        .iter()
        .zip(eig.eigenvalues.iter())
        .map(|(p, l)| p * p / l.max(1e-300))
        .collect();
    let x = radius * radius / lmax;
    Ok(imhof_upper(&lam, &nc, x)?.clamp(0.0, 1.0))
}

/// `P(Σ λ_i (Z_i + b_i)^2 > x)` with `nc_i = b_i^2`.
pub fn imhof_upper(lam: &[f64], nc: &[f64], x: f64) -> Result<f64> {
    let d = lam.len() as f64;
    let theta = |t: f64| {
        let mut s = 0.0;
        for (l, c) in lam.iter().zip(nc) {
            let lt = l * t;
            s += lt.atan() + c * lt / (1.0 + lt * lt);
        }
        0.5 * s - 0.5 * x * t
    };
    let log_rho = |t: f64| {
        let mut s = 0.0;
        for (l, c) in lam.iter().zip(nc) {
            let lt2 = (l * t) * (l * t);
            s += 0.25 * lt2.ln_1p() + 0.5 * c * lt2 / (1.0 + lt2);
        }
        s
    };
    let integrand = |t: f64| theta(t).sin() / (t * log_rho(t).exp());

    // Two bounds on |∫_T^∞ sin θ / (t ρ)|: the crude ∫_T^∞ dt / (t ρ(t)), and,
    // once θ' <= -m(T) < 0 on [T, ∞), the mean value bound 2 / (T ρ(T) m(T)).
    let log_prod: f64 = lam.iter().map(|l| l.ln()).sum();
    let tail_bound = |t: f64| {
        let c: f64 = lam
            .iter()
            .zip(nc)
            .map(|(l, c)| {
                let lt2 = (l * t) * (l * t);
                0.5 * c * lt2 / (1.0 + lt2)
            })
            .sum();
        let crude = (2.0 / d) * (-0.5 * d * t.ln() - 0.5 * log_prod - c).exp();
        let m = 0.5 * x
            - 0.5
                * lam
                    .iter()
                    .zip(nc)
                    .map(|(l, c)| l * (1.0 + c) / (1.0 + (l * t) * (l * t)))
                    .sum::<f64>();
        let oscillating = if m > 0.0 {
            2.0 / (t * log_rho(t).exp() * m)
        } else {
            f64::INFINITY
        };
        crude.min(oscillating) / std::f64::consts::PI
    };
    let mut upper = 1.0;
    while tail_bound(upper) > TAIL_TOL {
        upper *= 2.0;
        if upper > 1e15 {
            return Err(Error::Estimator("Imhof integral did not reach its tail tolerance".into()));
        }
    }
    let freq = 0.5 * lam.iter().zip(nc).map(|(l, c)| l * (1.0 + c)).sum::<f64>() + 0.5 * x;
    let width = (std::f64::consts::PI / freq).min(0.5);
    let panels = (upper / width).ceil() as usize;
    if panels > MAX_PANELS {
        return Err(Error::Estimator(format!(
            "Imhof integral needs {panels} panels, above the cap of {MAX_PANELS}"
        )));
    }
    let integral = crate::quad::gauss_legendre_composite(integrand, 0.0, upper, panels);
    Ok(0.5 + integral / std::f64::consts::PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rng_from_seed;
    use nalgebra::{DMatrix, DVector};
    use statrs::distribution::ChiSquared;

    #[test]
    fn central_chi_square() {
        for d in [2usize, 3, 5, 9] {
            let chi = ChiSquared::new(d as f64).unwrap();
            for x in [0.5, d as f64, 3.0 * d as f64] {
                let p = imhof_upper(&vec![1.0; d], &vec![0.0; d], x).unwrap();
                assert!((p - chi.sf(x)).abs() < 1e-7, "d {d} x {x}: {p} vs {}", chi.sf(x));
            }
        }
    }

    #[test]
    fn scalar_tail_is_erfc() {
        let g = MvNormal::new(DVector::from_vec(vec![0.0]), DMatrix::from_element(1, 1, 4.0)).unwrap();
        let r = 3.0;
        let expected = statrs::function::erf::erfc(r / (2.0 * 2f64.sqrt()));
        assert!((gaussian_norm_tail(&g, r).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn correlated_noncentral_against_monte_carlo() {
        let g = MvNormal::new(
            DVector::from_vec(vec![0.4, -0.8, 0.2, 1.1]),
            DMatrix::from_row_slice(
                4,
                4,
                &[
                    2.0, 0.3, 0.1, 0.0, 0.3, 1.0, 0.2, 0.1, 0.1, 0.2, 0.5, 0.05, 0.0, 0.1, 0.05, 0.1,
                ],
            ),
        )
        .unwrap();
        let mut rng = rng_from_seed(6);
        let m = 400_000;
        for r in [1.0, 2.0, 3.5] {
            let hits = (0..m)
                .filter(|_| crate::stats::norm(&g.sample(&mut rng)) > r)
                .count();
            let p_mc = hits as f64 / m as f64;
            let se = (p_mc * (1.0 - p_mc) / m as f64).sqrt().max(1e-6);
            let p = gaussian_norm_tail(&g, r).unwrap();
            assert!((p - p_mc).abs() < 4.0 * se, "r {r}: {p} vs {p_mc}");
        }
    }

    #[test]
    fn tail_shrinks_with_radius() {
        let g = MvNormal::new(DVector::from_vec(vec![1.0, 0.0, 0.5]), DMatrix::identity(3, 3)).unwrap();
        let mut last = 1.0;
        for r in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let p = gaussian_norm_tail(&g, r).unwrap();
            assert!(p < last);
            last = p;
        }
        assert!(last < 1e-8);
    }
}

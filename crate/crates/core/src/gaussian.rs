//! Multivariate normal with a cached Cholesky factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::stats::standard_normal_vec;

#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl MvNormal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || !cov.is_square() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone())
            .ok_or_else(|| Error::Factorization("covariance is not positive definite".into()))?;
        let d = mean.len() as f64;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Self {
            mean,
            cov: sym,
            chol,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn chol_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `(x - m)^T C^-1 (x - m)`.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let r = DVector::from_column_slice(x) - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&r)
            .expect("cholesky factor has a positive diagonal");
        z.norm_squared()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(x)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let z = DVector::from_vec(standard_normal_vec(rng, self.dim()));
        (&self.mean + self.chol.l() * z).iter().copied().collect()
    }

    /// Marginal standard deviations.
    pub fn marginal_sd(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.sqrt()).collect()
    }

    /// Probability of the box `[lower, upper]^d`, for `d <= 2`.
    pub fn box_probability(&self, lower: f64, upper: f64) -> Result<f64> {
        let d = self.dim();
        self.rect_probability(&vec![lower; d], &vec![upper; d])
    }

    /// Probability of the rectangle `Π [lo_k, hi_k]`, for `d <= 2`.
    pub fn rect_probability(&self, lo: &[f64], hi: &[f64]) -> Result<f64> {
        if lo.len() != self.dim() || hi.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: lo.len().min(hi.len()),
            });
        }
        match self.dim() {
            1 => {
                let n = Normal::new(self.mean[0], self.cov[(0, 0)].sqrt())
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok((n.cdf(hi[0]) - n.cdf(lo[0])).clamp(0.0, 1.0))
            }
            2 => Ok(self.box_probability_2d([lo[0], lo[1]], [hi[0], hi[1]])),
            d => Err(Error::Unsupported(format!(
                "closed-form box probability only for d <= 2, got {d}"
            ))),
        }
    }

    /// Integrates the marginal of `x1` against the conditional CDF of `x2`.
    fn box_probability_2d(&self, lo: [f64; 2], hi: [f64; 2]) -> f64 {
        let (m1, m2) = (self.mean[0], self.mean[1]);
        let (s11, s12, s22) = (self.cov[(0, 0)], self.cov[(0, 1)], self.cov[(1, 1)]);
        let sd1 = s11.sqrt();
        let cond_sd = (s22 - s12 * s12 / s11).max(0.0).sqrt();
        let a = lo[0].max(m1 - 12.0 * sd1);
        let b = hi[0].min(m1 + 12.0 * sd1);
        if a >= b {
            return 0.0;
        }
        let std = Normal::new(0.0, 1.0).unwrap();
        let integrand = |x1: f64| {
            let z = (x1 - m1) / sd1;
            let phi1 = (-0.5 * z * z).exp() / (sd1 * (2.0 * std::f64::consts::PI).sqrt());
            let mc = m2 + s12 / s11 * (x1 - m1);
            let p = if cond_sd == 0.0 {
                if mc >= lo[1] && mc <= hi[1] { 1.0 } else { 0.0 }
            } else {
                std.cdf((hi[1] - mc) / cond_sd) - std.cdf((lo[1] - mc) / cond_sd)
            };
            phi1 * p
        };
        crate::quad::gauss_legendre_composite(integrand, a, b, 2000).clamp(0.0, 1.0)
    }
}

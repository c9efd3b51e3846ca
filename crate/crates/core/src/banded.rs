//! Symmetric positive-definite band storage and its Cholesky factor.
//!
//! Only the lower band is stored. Row `i` keeps columns `i - bw ..= i`, so a
//! matrix of order `n` with half-bandwidth `bw` costs `n * (bw + 1)` doubles and
//! factors in `O(n bw^2)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            None
        } else {
            Some(i * (self.bw + 1) + (j + self.bw - i))
        }
    }

    /// Entry `(i, j)`; entries outside the band are zero.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Sets the symmetric pair `(i, j)` / `(j, i)`.
    ///
    /// Panics if the entry falls outside the band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let s = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside half-bandwidth {}", self.bw));
        self.data[s] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let v = self.get(i, j);
        self.set(i, j, v + value);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            for j in lo..=i {
                let a = row[j + self.bw - i];
                if a == 0.0 {
                    continue;
                }
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut l = self.data.clone();
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut diag = l[j * w + bw];
            for k in lo..j {
                let v = l[j * w + (k + bw - j)];
                diag -= v * v;
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::Factorization(format!(
                    "non-positive pivot {diag:e} at row {j}"
                )));
            }
            let ljj = diag.sqrt();
            l[j * w + bw] = ljj;
            for i in j + 1..n.min(j + bw + 1) {
                let lo_i = i.saturating_sub(bw).max(lo);
                let mut s = l[i * w + (j + bw - i)];
                for k in lo_i..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                l[i * w + (j + bw - i)] = s / ljj;
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }
}

/// Lower-triangular band factor `L` with `M = L L^T`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= self.l[k * w + (i + bw - k)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
    }

    /// `log det M = 2 * sum(log L_ii)`.
    pub fn log_det(&self) -> f64 {
        let w = self.bw + 1;
        2.0 * (0..self.n).map(|i| self.l[i * w + self.bw].ln()).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, bw: usize, rng: &mut ChaCha8Rng) -> BandedSpd {
        let mut m = BandedSpd::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                m.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        for i in 0..n {
            m.set(i, i, 2.0 * bw as f64 + 1.0 + rng.random::<f64>());
        }
        m
    }

    #[test]
    fn matches_dense_cholesky_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, bw) in &[(1, 0), (5, 1), (16, 3), (40, 6)] {
            let m = random_spd(n, bw, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = m.cholesky().unwrap().solve(&b);
            let dense = m.to_dense();
            let xd = dense.clone().cholesky().unwrap().solve(&DVector::from_vec(b.clone()));
            for i in 0..n {
                assert!((x[i] - xd[i]).abs() < 1e-12, "n={n} bw={bw}");
            }
            let mx = m.mul_vec(&x);
            for i in 0..n {
                assert!((mx[i] - b[i]).abs() < 1e-12);
            }
            let ld = m.cholesky().unwrap().log_det();
            assert!((ld - dense.determinant().ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut m = BandedSpd::zeros(2, 1);
        m.set(0, 0, 1.0);
        m.set(1, 1, 1.0);
        m.set(1, 0, 2.0);
        assert!(matches!(m.cholesky(), Err(Error::Factorization(_))));
    }

    #[test]
    fn dense_round_trip_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_spd(9, 2, &mut rng);
        let d: DMatrix<f64> = m.to_dense();
        assert_eq!(d, d.transpose());
        assert_eq!(m.get(0, 5), 0.0);
    }
}

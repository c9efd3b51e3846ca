//! Five-point finite-difference discretisation of `-Δu + q u = f` on the unit
//! square with Dirichlet data `u = g`.
//!
//! Interior nodes `(i, j)`, `1 <= i, j <= N-1`, are numbered row-wise:
//! `k = (j-1)(N-1) + (i-1)`, so `i` (the `x` index) runs fastest. The
//! discrete system is `(h^-2 A + Q) u = f + h^-2 g`, where `A` is the
//! block-tridiagonal Laplacian with `B = tridiag(-1, 4, -1)` blocks and `-I`
//! off-diagonal blocks, and `Q = diag(q)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::banded::{BandedCholesky, BandedSpd};
use crate::error::{Error, Result};
use crate::model::{check_len, ForwardMap};

/// Uniform grid with `N` subdivisions per side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct GridSpec {
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    n_grid: usize,
    #[serde(default)]
    d: Option<usize>,
    #[serde(default)]
    h: Option<f64>,
    #[serde(default)]
    ordering: Option<String>,
}

impl TryFrom<GridRepr> for GridSpec {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        let g = GridSpec::new(r.n_grid)?;
        if let Some(d) = r.d {
            if d != g.d() {
                return Err(Error::DimensionMismatch {
                    expected: g.d(),
                    got: d,
                });
            }
        }
        Ok(g)
    }
}

impl From<GridSpec> for GridRepr {
    fn from(g: GridSpec) -> Self {
        GridRepr {
            n_grid: g.n,
            d: Some(g.d()),
            h: Some(g.h()),
            ordering: Some("row-wise".into()),
        }
    }
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("N must be >= 2, got {n}")));
        }
        Ok(Self { n })
    }

    /// Number of subdivisions `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Interior nodes per side, `N - 1`.
    pub fn side(&self) -> usize {
        self.n - 1
    }

    pub fn d(&self) -> usize {
        self.side() * self.side()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Row-wise index of interior node `(i, j)`, both in `1..N`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!((1..self.n).contains(&i) && (1..self.n).contains(&j));
        (j - 1) * self.side() + (i - 1)
    }

    /// Inverse of [`GridSpec::index`].
    pub fn node(&self, k: usize) -> (usize, usize) {
        (k % self.side() + 1, k / self.side() + 1)
    }

    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.h(), j as f64 * self.h())
    }

    /// Grid size whose interior dimension is `d`, if `d` is a perfect square.
    pub fn for_dim(d: usize) -> Option<Self> {
        let side = (d as f64).sqrt().round() as usize;
        (side >= 1 && side * side == d).then(|| GridSpec { n: side + 1 })
    }
}

/// Closed interval `[lower, upper]` applied to every component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            lower: 0.1,
            upper: 10.0,
        }
    }
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidArgument(format!(
                "bounds must satisfy lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    pub fn contains_all(&self, q: &[f64]) -> bool {
        q.iter().all(|&x| self.contains(x))
    }

    pub fn strictly_contains_all(&self, q: &[f64]) -> bool {
        q.iter().all(|&x| x > self.lower && x < self.upper)
    }

    pub fn check(&self, q: &[f64]) -> Result<()> {
        match q.iter().position(|&x| !self.contains(x)) {
            None => Ok(()),
            Some(index) => Err(Error::BoundsViolation {
                index,
                value: q[index],
                lower: self.lower,
                upper: self.upper,
            }),
        }
    }
}

/// Coefficient values at interior nodes together with their admissible box.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumField {
    values: Vec<f64>,
    bounds: Bounds,
}

impl MediumField {
    pub fn new(values: Vec<f64>, bounds: Bounds) -> Result<Self> {
        bounds.check(&values)?;
        Ok(Self { values, bounds })
    }

    pub fn constant(grid: &GridSpec, value: f64, bounds: Bounds) -> Result<Self> {
        Self::new(vec![value; grid.d()], bounds)
    }

    /// Samples `q(x, y)` at the interior nodes.
    pub fn from_fn(grid: &GridSpec, bounds: Bounds, q: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..grid.d())
            .map(|k| {
                let (i, j) = grid.node(k);
                let (x, y) = grid.coords(i, j);
                q(x, y)
            })
            .collect();
        Self::new(values, bounds)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Source and boundary contributions in row-wise order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemData {
    pub f_vec: Vec<f64>,
    pub g_vec: Vec<f64>,
    /// `f > 0` at every interior node.
    pub f_positive: bool,
    /// `g > 0` at every boundary node touched by the stencil.
    pub g_positive: bool,
}

impl ProblemData {
    /// Evaluates `f` at interior nodes and assembles `g` by the stencil.
    pub fn from_fns(
        grid: &GridSpec,
        f: impl Fn(f64, f64) -> f64,
        g: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let f_vec: Vec<f64> = (0..grid.d())
            .map(|k| {
                let (i, j) = grid.node(k);
                let (x, y) = grid.coords(i, j);
                f(x, y)
            })
            .collect();
        let g_positive = boundary_nodes(grid).all(|(i, j)| {
            let (x, y) = grid.coords(i, j);
            g(x, y) > 0.0
        });
        Self {
            f_positive: f_vec.iter().all(|&v| v > 0.0),
            g_vec: boundary_vector(grid, &g),
            f_vec,
            g_positive,
        }
    }

    pub fn constant(grid: &GridSpec, f: f64, g: f64) -> Self {
        Self::from_fns(grid, |_, _| f, |_, _| g)
    }

    pub fn dim(&self) -> usize {
        self.f_vec.len()
    }

    pub fn is_positive(&self) -> bool {
        self.f_positive && self.g_positive
    }

    fn check(&self, grid: &GridSpec) -> Result<()> {
        for len in [self.f_vec.len(), self.g_vec.len()] {
            if len != grid.d() {
                return Err(Error::DimensionMismatch {
                    expected: grid.d(),
                    got: len,
                });
            }
        }
        Ok(())
    }
}

/// Boundary nodes adjacent (in the five-point sense) to some interior node.
fn boundary_nodes(grid: &GridSpec) -> impl Iterator<Item = (usize, usize)> + '_ {
    let n = grid.n();
    (1..n).flat_map(move |m| [(m, 0), (m, n), (0, m), (n, m)])
}

/// Boundary vector assembled from the stencil: each interior node collects
/// `g` at those of its four neighbours that lie on the boundary.
pub fn boundary_vector(grid: &GridSpec, g: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = grid.n();
    let gv = |i: usize, j: usize| {
        let (x, y) = grid.coords(i, j);
        g(x, y)
    };
    (0..grid.d())
        .map(|k| {
            let (i, j) = grid.node(k);
            let mut s = 0.0;
            if i == 1 {
                s += gv(0, j);
            }
            if i == n - 1 {
                s += gv(n, j);
            }
            if j == 1 {
                s += gv(i, 0);
            }
            if j == n - 1 {
                s += gv(i, n);
            }
            s
        })
        .collect()
}

/// The boundary vector written out block by block in the layout of the
/// classical textbook display: block `b` runs over the nodes `(b, 1..N-1)`,
/// so its first entry is `g(0,1) + g(1,0)` and the interior blocks read
/// `[g(b,0), 0, ..., 0, g(b,N)]`.
///
/// The display fixes the first grid index per block, i.e. it is the stencil
/// vector in column-major node order. [`boundary_vector`] is the version that
/// matches the row-wise unknown ordering; the two agree after transposing
/// the node numbering.
pub fn printed_boundary_layout(grid: &GridSpec, g: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = grid.n();
    let m = grid.side();
    let gv = |i: usize, j: usize| {
        let (x, y) = grid.coords(i, j);
        g(x, y)
    };
    if n == 2 {
        return vec![gv(0, 1) + gv(1, 0) + gv(2, 1) + gv(1, 2)];
    }
    let mut out = Vec::with_capacity(m * m);
    for b in 1..n {
        let first_block = b == 1;
        let last_block = b == n - 1;
        for e in 1..n {
            let mut v = 0.0;
            if first_block {
                v += gv(0, e);
            }
            if last_block {
                v += gv(n, e);
            }
            if e == 1 {
                v += gv(b, 0);
            }
            if e == n - 1 {
                v += gv(b, n);
            }
            out.push(v);
        }
    }
    out
}

/// Dense block-tridiagonal Laplacian `A` (without the `h^-2` factor).
pub fn laplacian_matrix(grid: &GridSpec) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(grid.d(), grid.d());
    for (k, l, v) in laplacian_entries(grid) {
        a[(k, l)] = v;
        a[(l, k)] = v;
    }
    a
}

/// Lower-triangle entries `(row, col, value)` of `A`.
fn laplacian_entries(grid: &GridSpec) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let side = grid.side();
    (0..grid.d()).flat_map(move |k| {
        let (i, j) = grid.node(k);
        let mut entries = Vec::with_capacity(3);
        entries.push((k, k, 4.0));
        if i > 1 {
            entries.push((k, k - 1, -1.0));
        }
        if j > 1 {
            entries.push((k, k - side, -1.0));
        }
        entries
    })
}

/// Closed-form eigenvalues `2(2 - cos(iπ/N) - cos(jπ/N))` of `A`, ascending.
pub fn eigenvalues_of_a(grid: &GridSpec) -> Vec<f64> {
    let n = grid.n() as f64;
    let mut eig: Vec<f64> = (1..grid.n())
        .flat_map(|i| {
            (1..grid.n()).map(move |j| {
                2.0 * (2.0 - (i as f64 * PI / n).cos() - (j as f64 * PI / n).cos())
            })
        })
        .collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Assembled and factorised `h^-2 A + Q`.
///
/// Immutable once built; solves only borrow it, so one system can serve
/// concurrent right-hand sides.
#[derive(Debug, Clone)]
pub struct ForwardSystem {
    grid: GridSpec,
    q: Vec<f64>,
    matrix: BandedSpd,
    factor: BandedCholesky,
}

pub fn assemble(grid: &GridSpec, q: &MediumField, data: &ProblemData) -> Result<ForwardSystem> {
    check_len(grid.d(), q.values())?;
    data.check(grid)?;
    q.bounds().check(q.values())?;
    let h2 = 1.0 / (grid.h() * grid.h());
    let mut m = BandedSpd::zeros(grid.d(), grid.side());
    for (k, l, v) in laplacian_entries(grid) {
        m.set(k, l, h2 * v);
    }
    for (k, &qk) in q.values().iter().enumerate() {
        m.add(k, k, qk);
    }
    let factor = m.cholesky()?;
    Ok(ForwardSystem {
        grid: *grid,
        q: q.values().to_vec(),
        matrix: m,
        factor,
    })
}

impl ForwardSystem {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn dense(&self) -> DMatrix<f64> {
        self.matrix.to_dense()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(x)
    }

    /// `M^-1 rhs` through the cached factorisation.
    pub fn solve_rhs(&self, rhs: &[f64]) -> Vec<f64> {
        self.factor.solve(rhs)
    }

    pub fn log_det(&self) -> f64 {
        self.factor.log_det()
    }

    pub fn rhs(&self, data: &ProblemData) -> Vec<f64> {
        let h2 = 1.0 / (self.grid.h() * self.grid.h());
        data.f_vec
            .iter()
            .zip(&data.g_vec)
            .map(|(f, g)| f + h2 * g)
            .collect()
    }
}

pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSolution {
    pub u: Vec<f64>,
}

impl ForwardSolution {
    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u)
    }
}

pub fn solve(sys: &ForwardSystem, data: &ProblemData) -> Result<ForwardSolution> {
    data.check(&sys.grid)?;
    let rhs = sys.rhs(data);
    let u = sys.solve_rhs(&rhs);
    let res = sys
        .apply(&u)
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let rhs_norm = rhs.iter().map(|r| r * r).sum::<f64>().sqrt();
    if !(res <= RESIDUAL_TOL * (1.0 + rhs_norm)) {
        return Err(Error::Internal(format!(
            "forward residual {res:e} exceeds tolerance (|rhs| = {rhs_norm:e})"
        )));
    }
    Ok(ForwardSolution { u })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxPrincipleReport {
    pub min_u: f64,
    pub max_u: f64,
    pub pass: bool,
    /// False when `f` or `g` is not strictly positive; the bounds are then
    /// reported but carry no guarantee.
    pub precondition_ok: bool,
}

pub fn max_principle_check(u: &ForwardSolution, data: &ProblemData) -> MaxPrincipleReport {
    let min_u = u.u.iter().copied().fold(f64::INFINITY, f64::min);
    let max_u = u.u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    MaxPrincipleReport {
        min_u,
        max_u,
        pass: min_u > 0.0,
        precondition_ok: data.is_positive(),
    }
}

/// The medium problem `q -> u(q)` on a fixed grid with fixed data.
#[derive(Debug, Clone)]
pub struct MediumProblem {
    pub grid: GridSpec,
    pub data: ProblemData,
    pub bounds: Bounds,
}

impl MediumProblem {
    pub fn new(grid: GridSpec, data: ProblemData, bounds: Bounds) -> Result<Self> {
        data.check(&grid)?;
        Ok(Self { grid, data, bounds })
    }

    /// `f ≡ 1`, `g ≡ 1`, `q ∈ [0.1, 10]`.
    pub fn with_defaults(n_grid: usize) -> Result<Self> {
        let grid = GridSpec::new(n_grid)?;
        let data = ProblemData::constant(&grid, 1.0, 1.0);
        Self::new(grid, data, Bounds::default())
    }

    pub fn system(&self, q: &[f64]) -> Result<ForwardSystem> {
        let field = MediumField::new(q.to_vec(), self.bounds)?;
        assemble(&self.grid, &field, &self.data)
    }

    pub fn solve(&self, q: &[f64]) -> Result<(ForwardSystem, ForwardSolution)> {
        let sys = self.system(q)?;
        let u = solve(&sys, &self.data)?;
        Ok((sys, u))
    }
}

impl ForwardMap for MediumProblem {
    fn dim(&self) -> usize {
        self.grid.d()
    }

    fn forward(&self, q: &[f64]) -> Result<DVector<f64>> {
        Ok(self.solve(q)?.1.to_dvector())
    }

    fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let (sys, u) = self.solve(q)?;
        Ok(crate::jacobian::jacobian(&sys, &u)?.matrix)
    }
}

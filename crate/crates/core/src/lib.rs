//! Numerical laboratory for the Bernstein-von Mises behaviour of a nonlinear
//! Bayesian inverse medium problem.
//!
//! The forward map sends a coefficient field `q` on an `(N-1) x (N-1)`
//! interior grid to the finite-difference solution of `-Δu + q u = f` with
//! Dirichlet data `g`. On top of it the crate builds synthetic posteriors,
//! their Gaussian approximation, samplers, and the diagnostics used to
//! measure how close the two are as the noise level and the dimension vary.

pub mod audit;
pub mod banded;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod gaussian;
pub mod jacobian;
pub mod model;
pub mod posterior;
pub mod quad;
pub mod quadform;
pub mod samplers;
pub mod stats;
pub mod sweep;

pub use error::{Error, Result};
pub use forward::{
    assemble, eigenvalues_of_a, max_principle_check, solve, Bounds, ForwardSolution, ForwardSystem,
    GridSpec, MediumField, MediumProblem, ProblemData,
};
pub use gaussian::MvNormal;
pub use jacobian::{jacobian, spectral_report, JacobianMatrix, SpectralReport};
pub use model::{ForwardMap, LinearMap};
pub use posterior::{GaussianApprox, LogTarget, PosteriorSpec, PriorKind, PriorSpec};
pub use samplers::{ChainConfig, SampleSet, SamplerKind};

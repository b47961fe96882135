//! Solver and property-verification harness for the stochastic p-Laplace
//! evolution equation
//!
//! ```text
//! du - div(|∇u|^{p-2} ∇u) dt = Φ dβ   in (0, T) × D,   u = 0 on ∂D,
//! ```
//!
//! with additive Itô noise, on the unit interval or unit square.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: meshes, grid functions, discrete gradient/divergence, norms.
//! * [`plap`]: the discrete p-Laplacian and its convex energy.
//! * [`noise`]: seeded Brownian paths and noise fields.
//! * [`stepper`]: implicit Euler–Maruyama steps and trajectories.
//! * [`truncation`]: truncations, cutoffs and renormalization families.
//! * [`regularizer`]: cutoff-then-mollify regularization operators.
//! * [`verifier`]: residuals of the Itô/renormalized identities along
//!   trajectories, truncation energies and dissipation profiles.
//! * [`markov`]: pathwise contraction, flow and Monte Carlo semigroup checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod grid;
pub mod initial;
mod linalg;
pub mod markov;
pub mod noise;
pub mod plap;
pub mod regularizer;
mod stats;
pub mod stepper;
pub mod truncation;
pub mod verifier;

pub use grid::{discrete_divergence, discrete_gradient, norm_lq, EdgeField, GridFunction, Mesh};
pub use initial::InitialDatum;
pub use noise::{sample_brownian, BrownianPath, NoiseField};
pub use plap::{apply_plap, energy, PlapParams};
pub use stepper::{implicit_step, solve_path, SolverOptions, Trajectory};
pub use truncation::ScalarFamily;

//! Numerical toolkit for stochastic target games between a controller and
//! an adverse player ("nature").
//!
//! The pipeline runs in five stages:
//!
//! 1. [`model`] declares the coefficients, the control and adverse sets and
//!    the target function, and validates the structural assumptions by sampling.
//! 2. [`hamiltonian`] evaluates the game Hamiltonian by grid search over the
//!    adverse set and picks an exponential rescaling that makes it monotone in `y`.
//! 3. [`pde`] solves the backward HJB equation with an explicit monotone
//!    scheme and checks candidate surfaces (residuals, jets, comparison, lattice).
//! 4. [`strategy`] turns a surface into a feedback control through the
//!    inversion map `û`, and composes strategies at pathwise stopping rules.
//! 5. [`sim`] simulates the controlled system against adversary policies and
//!    certifies the target property and the dynamic programming principle
//!    by Monte Carlo.
//!
//! Every numerical routine is generic over [`Scalar`] (`f32` or `f64`).
//! The `*64` and `*32` aliases below fix the scalar type.

pub mod error;
pub mod hamiltonian;
pub mod model;
pub mod oracle;
pub mod pde;
pub mod sampling;
pub mod scalar;
pub mod sim;
pub mod strategy;

pub use error::{Error, Result};
pub use hamiltonian::{h, h_tilde, select_scaling, AdverseGrid, HamiltonianEval, Rescaling};
pub use model::{validate_assumptions, AssumptionReport, BoxDomain, GameModel, ModelSpec};
pub use pde::{cfl_grid, residual, solve_hjb, Grid, GridFn, ResidualReport};
pub use scalar::{Scalar, MAX_DIM};
pub use sim::{certify_target, simulate, AdversaryPolicy, CertReport, Experiment, McConfig, SimPath};
pub use strategy::{concat, synthesize, StopFamily, StopRule, Strategy};

pub type GameModel64 = GameModel<f64>;
pub type GameModel32 = GameModel<f32>;
pub type Grid64 = Grid<f64>;
pub type Grid32 = Grid<f32>;
pub type GridFn64 = GridFn<f64>;
pub type GridFn32 = GridFn<f32>;
pub type Strategy64 = Strategy<f64>;
pub type Strategy32 = Strategy<f32>;
pub type SimPath64 = SimPath<f64>;
pub type SimPath32 = SimPath<f32>;
pub type AdversaryPolicy64 = AdversaryPolicy<f64>;
pub type AdversaryPolicy32 = AdversaryPolicy<f32>;

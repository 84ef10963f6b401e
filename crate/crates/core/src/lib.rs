//! Numerical kernels for a zero-sum stochastic differential game between an
//! impulse player (maximizer, with an impulse budget fixed in advance) and a
//! diffusion player (minimizer).
//!
//! The crate is `no_std` (with `alloc`) and performs no IO. It provides:
//!
//! - [`problem`]: the parametric coefficient catalog, assumption checks and
//!   a-priori constants,
//! - [`intervention`]: the intervention operator `M` on grid fields,
//! - [`solver`]: a monotone implicit/explicit finite-difference solver for the
//!   Hamilton-Jacobi-Bellman-Isaacs quasi-variational inequality,
//! - [`sim`]: Euler-Maruyama simulation of the impulse-controlled SDE and
//!   Monte Carlo estimates of the gain functional,
//! - [`game`]: policy extraction, value-pair estimates, budget sweeps and
//!   dynamic-programming residuals,
//! - [`verify`]: executable structural checks on fields and solutions.
//!
//! Parallel work goes through the [`Executor`] trait; the default
//! [`Sequential`] executor and any order-preserving parallel executor produce
//! bitwise identical results.
#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

extern crate alloc;

pub mod error;
pub mod exec;
pub mod game;
pub mod grid;
pub mod intervention;
mod linalg;
pub mod model;
pub mod problem;
pub mod rational;
pub mod sim;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use grid::{BoundaryPolicy, Grid, SpaceGrid, TimeGrid, ValueField};
pub use intervention::{apply_intervention, best_impulse, ImpulseGrid, InterventionResult};
pub use model::{Control, Discounted, GameModel, Point, MAX_DIM};
pub use problem::{
    global_bound, truncation_radius, validate_problem, ProblemSpec, ValidationReport,
};
pub use rational::Rational;
pub use solver::{solve, Scheme, Solution, TimeStepping};

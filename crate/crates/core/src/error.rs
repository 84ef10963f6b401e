use alloc::string::String;

use thiserror::Error;

use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("non-conforming instance: {0}")]
    NonConforming(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("truncation radius undefined: impulse cost does not grow with |z|")]
    NoTruncationRadius,
    #[error("impulse grid is empty")]
    EmptyImpulseGrid,
    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },
    #[error(
        "obstacle iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    ObstacleNotConverged { iterations: usize, residual: f64 },
    #[error("policy iteration did not converge in {rounds} rounds at time step {step}")]
    PolicyIterationNotConverged { step: usize, rounds: usize },
    #[error("singular linear system at row {row}")]
    SingularSystem { row: usize },
    #[error("explicit step violates the positive-coefficient condition: dt = {dt:e} > {limit:e}")]
    CflViolated { dt: f64, limit: f64 },
    #[error("simulated state is not finite after step {step}")]
    BlowUp { step: usize },
    #[error("time {0} is not a grid time")]
    NotOnGrid(Rational),
    #[error("grids are not nested by factor-2 refinement: {0}")]
    NotNested(String),
    #[error("solution is incomplete: {0}")]
    IncompleteSolution(String),
    #[error("discount mismatch: solution uses rho = {solution}, expected rho = {expected}")]
    DiscountMismatch { solution: f64, expected: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

//! Error types shared across the crate.

use crate::layout::VarClass;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LayoutError {
    #[error("duplicate variable name `{0}` in layout")]
    DuplicateName(String),
    #[error("unknown variable name `{0}`")]
    UnknownName(String),
    #[error("variable `{name}` is {actual}, expected {expected}")]
    WrongClass {
        name: String,
        expected: VarClass,
        actual: VarClass,
    },
    #[error("state has {actual} entries, layout expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Failures of the Newton-type solvers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolveError {
    #[error("no convergence after {iterations} Newton steps (residual {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("singular Jacobian (pivot {pivot:.3e} at step {iteration})")]
    SingularJacobian { pivot: f64, iteration: usize },
    #[error("non-finite residual entry during evaluation")]
    NonFiniteEntry,
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EigenError {
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("branch endpoint `{0}` references no known bus")]
    UnknownBus(String),
    #[error("device `{device}` references unknown {kind} `{target}`")]
    UnknownReference {
        device: String,
        kind: &'static str,
        target: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid parameter for `{device}`: {message}")]
    InvalidParameter { device: String, message: String },
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

/// Comparison of two trajectories over an empty time overlap.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("trajectories have no overlapping time range")]
pub struct EmptyOverlap;

//! Linear algebra and Newton iteration for the implicit stage systems:
//! a sparse periodic core plus a few dense border rows and columns for the
//! penalty unknowns.

mod banded;
mod bordered;
mod newton;
mod sparse;

pub use banded::{rcm_ordering, BandedLu};
pub use bordered::{pseudo_inverse, BorderedLu, BorderedMatrix, BORDER_RCOND};
pub use newton::{
    finite_difference_jacobian, newton_solve, JacobianMode, Newton, NewtonConfig, NewtonReport,
    NonlinearSystem,
};
pub use sparse::CsrMatrix;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("matrix numerically singular at column {column} (pivot ratio {condition_estimate:.3e})")]
    Singular {
        column: usize,
        condition_estimate: f64,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("Jacobian singular at Newton iteration {iteration}: {source}")]
    Singular {
        iteration: usize,
        #[source]
        source: LinearError,
    },
    #[error("non-finite residual at Newton iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("Newton did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

//! Periodic 1D broken polynomial spaces: mesh, quadrature, Legendre modal
//! basis, projections, operator assembly and interface trace algebra.

mod basis;
mod field;
mod mesh;
mod ops;
mod quadrature;
mod space;
mod traces;

pub use basis::{left_end, legendre_all, legendre_with_derivative, right_end, BasisTable};
pub use field::DofVector;
pub use mesh::Mesh;
pub use ops::{assemble_operators, derivative_entry, BlockOp, OperatorSet};
pub use quadrature::{gauss_rule, QuadratureRule};
pub use space::{DgSpace, Side, MAX_DEGREE};
pub use traces::{
    boundary_product, interface_identity_check, jump_avg_sum, jump_sum, l2_project, trace_values,
    NodeTraces,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DgError {
    #[error("invalid domain [{a}, {b}]: need finite a < b")]
    InvalidDomain { a: f64, b: f64 },
    #[error("need at least 2 elements, got {0}")]
    TooFewElements(usize),
    #[error("mesh nodes must be strictly increasing")]
    NonIncreasingNodes,
    #[error("polynomial degree {0} outside the supported range 0..={MAX_DEGREE}")]
    DegreeOutOfRange(usize),
    #[error("fields live on different meshes ({0} vs {1} nodes)")]
    MismatchedMesh(usize, usize),
}

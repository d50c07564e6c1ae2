//! Dense numerical kernels: Newton solvers on state subsets, finite-difference
//! Jacobian blocks, spectra, and constraint-manifold point classification.

mod classify;
mod eig;
mod jacobian;
mod newton;

pub use classify::{classify_point, ManifoldPointClass, GAMMA_S_MARGIN, SINGULARITY_RATIO};
pub(crate) use classify::singular_value_extremes;
pub use eig::{eigenpairs, eigenvalues, eigenvalues_infallible};
pub use jacobian::{block_matrix, jacobian_blocks, reduced_jacobian, slow_blocks, JacobianBlocks, SlowBlocks};
pub use newton::{
    lu_solve_checked, newton_solve, solve_algebraic, solve_equilibrium_fast, NewtonOptions,
    SolveInfo,
};

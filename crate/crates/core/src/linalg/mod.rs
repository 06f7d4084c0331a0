//! Dense linear algebra used by the curvature and solver code.

mod cg;
mod eigen;
mod kron;
mod matrix;

pub use cg::{cg_solve, CgOutcome, FnOperator, LinearOperator};
pub use eigen::{
    abs_eig, default_eig_tol, min_eigenvalue, pos_eig, pos_eig_scalar, sym_eig,
    EigenDecomposition,
};
pub(crate) use eigen::check_gamma;
pub use kron::{kron, kron_apply};
pub use matrix::{axpy, dot, norm2, DenseMatrix};

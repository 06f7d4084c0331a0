//! Second-order training for fully-connected networks: block-diagonal
//! positive-curvature Hessian (PCH) approximations, an expectation-approximated
//! conjugate-gradient Newton solver (EA-CG), Fisher / Gauss-Newton /
//! Kronecker-factored-inverse baselines, and experiment drivers.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curvature;
pub mod data;
pub mod error;
pub mod fcnn;
pub mod harness;
pub mod linalg;
pub mod solvers;
pub mod trainer;

pub use error::{Error, Result};

//! Dense linear algebra and 1-D quadrature used by the rest of the crate.
//!
//! Nothing in here knows about kernels or regression; every routine is a
//! plain numeric primitive sized for the small `p` of a linear model.

mod linalg;
mod quadrature;

pub(crate) use linalg::weighted_gram_trace;
pub use linalg::{solve_weighted_normal_equations, Cholesky, DenseMatrix};
pub use quadrature::{gauss_legendre, integrate_1d, QuadratureSpec};

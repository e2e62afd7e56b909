//! Dense linear algebra, special functions, quadrature, seeded randomness and
//! the entropy functional shared by every method.
//!
//! All arithmetic is `f64`. Entropies are reported in nats.

mod linalg;
mod matrix;
mod prob;
mod quadrature;
mod rng;
mod special;

pub(crate) use linalg::forward_substitute;
pub use linalg::{
    cholesky, cholesky_jittered, cholesky_or_jitter, cholesky_solve, solve_lower_transposed, solve_triangular,
    spd_inverse, JitterPolicy, Triangle,
};
pub use matrix::{dot, DenseMatrix};
pub(crate) use matrix::{gemm, MatRef};
pub use prob::{binary_entropy, entropy, log_softmax, softmax, ProbVector};
pub use quadrature::{gauss_hermite, GaussHermite};
pub use rng::RngStream;
pub use special::{
    log_sigmoid, log_std_normal_cdf, normal_hazard, normal_pdf, sigmoid, softplus, softplus_inv, std_normal_cdf,
    std_normal_pdf,
};

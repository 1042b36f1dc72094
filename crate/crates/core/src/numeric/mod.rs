//! Numerical building blocks shared by the analytic solvers: adaptive
//! Gauss–Kronrod quadrature, fixed Gauss–Legendre rules and bracketed 1-D
//! searches.

mod optimize;
mod quad;

pub use optimize::{bracketed_root, golden_max, golden_min, scan_then_golden_max, GoldenResult};
pub use quad::{gauss_legendre, integrate, integrate_tol, GaussLegendre, QuadTol};

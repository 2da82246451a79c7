//! Dense numerical primitives: matrix exponential, Perron root, quadrature.

mod expm;
mod matrix;
mod quadrature;
mod spectral;

pub use expm::matrix_exp;
pub use matrix::DenseMatrix;
pub use quadrature::{integrate_matrix, GaussLegendre};
pub use spectral::{perron, spectral_radius, PerronResult, DEFAULT_MAX_ITER, DEFAULT_TOL};

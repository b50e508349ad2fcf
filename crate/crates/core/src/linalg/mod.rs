//! Dense linear algebra substrate.

mod matrix;
mod qr;
mod range;
mod rng;
mod svd;

pub use matrix::DenseMatrix;
pub use qr::{qr_orthonormalize, qr_orthonormalize_with_tol, RANK_TOL};
pub use range::{randomized_range, RangeFinderConfig};
pub use rng::{RngState, Sampler};
pub use svd::{exact_left_singular_vectors, exact_svd, SvdResult, MAX_SWEEPS, ORTHO_TOL};

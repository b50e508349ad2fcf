//! Randomized range finder with subspace (power) iteration.

use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::qr::{thin_qr, RANK_TOL};
use super::rng::RngState;
use super::svd::exact_svd;
use crate::error::{LotusError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeFinderConfig {
    pub oversample: usize,
    pub power_iters: usize,
}

impl Default for RangeFinderConfig {
    fn default() -> Self {
        Self {
            oversample: 5,
            power_iters: 2,
        }
    }
}

fn orthonormalize_sketch(y: &DenseMatrix, rank: usize) -> Result<DenseMatrix> {
    let qr = thin_qr(y)?;
    // Oversampled columns may legitimately collapse (exactly low-rank input);
    // only the leading `rank` directions have to survive.
    match qr.first_deficient(RANK_TOL) {
        Some(column) if column < rank => Err(LotusError::RankDeficient {
            column,
            magnitude: qr.r_diag[column],
        }),
        _ => Ok(qr.q),
    }
}

/// Orthonormal `m x rank` basis approximating the dominant left singular
/// subspace of `a`.
///
/// Draws a Gaussian test matrix with `rank + oversample` columns, forms
/// `(AAᵀ)^power_iters · A · Ω` re-orthonormalizing after every multiplication,
/// then keeps the `rank` leading left singular directions of `A` restricted to
/// the sketched span.
pub fn randomized_range(
    a: &DenseMatrix,
    rank: usize,
    oversample: usize,
    power_iters: usize,
    rng: RngState,
) -> Result<DenseMatrix> {
    let (m, n) = a.shape();
    let sketch = rank + oversample;
    if rank == 0 || sketch > m.min(n) {
        return Err(LotusError::InvalidRank {
            rank,
            oversample,
            rows: m,
            cols: n,
        });
    }
    let omega = rng.gaussian_matrix(n, sketch);
    let mut q = orthonormalize_sketch(&a.matmul(&omega)?, rank)?;
    for _ in 0..power_iters {
        let z = orthonormalize_sketch(&a.t_matmul(&q)?, rank)?;
        q = orthonormalize_sketch(&a.matmul(&z)?, rank)?;
    }
    if sketch == rank && power_iters == 0 {
        return Ok(q);
    }
    // Rayleigh-Ritz: best rank-`rank` directions inside span(q)
    let b = q.t_matmul(a)?;
    let small = exact_svd(&b)?;
    q.matmul(&small.u.leading_columns(rank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qr::qr_orthonormalize;

    /// `U diag(sigma) Vᵀ` with random orthonormal U, V.
    fn with_spectrum(m: usize, n: usize, sigma: &[f64], seed: u64) -> DenseMatrix {
        let rng = RngState::new(seed);
        let k = sigma.len();
        let u = qr_orthonormalize(&rng.fork(1).gaussian_matrix(m, k)).unwrap();
        let v = qr_orthonormalize(&rng.fork(2).gaussian_matrix(n, k)).unwrap();
        let us = DenseMatrix::from_fn(m, k, |i, j| u.get(i, j) * sigma[j]);
        us.matmul_t(&v).unwrap()
    }

    fn residual(q: &DenseMatrix, a: &DenseMatrix) -> f64 {
        let proj = q.matmul(&q.t_matmul(a).unwrap()).unwrap();
        proj.sub(a).unwrap().frobenius_norm() / a.frobenius_norm()
    }

    #[test]
    fn exact_low_rank_with_gap_is_recovered() {
        let r = 6;
        let mut sigma: Vec<f64> = (0..r).map(|i| 10.0 - i as f64).collect();
        sigma.extend(std::iter::repeat_n(1e-12, 10));
        let a = with_spectrum(40, 30, &sigma, 4);
        let q = randomized_range(&a, r, 5, 2, RngState::new(8)).unwrap();
        assert_eq!(q.shape(), (40, r));
        assert!(residual(&q, &a) <= 1e-6, "residual {}", residual(&q, &a));
    }

    #[test]
    fn identity_full_rank() {
        let a = DenseMatrix::identity(7);
        let q = randomized_range(&a, 7, 0, 0, RngState::new(1)).unwrap();
        let qqt = q.matmul_t(&q).unwrap();
        assert!(qqt.max_abs_diff(&DenseMatrix::identity(7)) <= 1e-8);
    }

    #[test]
    fn exactly_rank_one_input_with_oversampling() {
        let x = [1.0, 2.0, -1.0, 0.5, 3.0, -2.0];
        let y = [1.0, -1.0, 2.0, 0.0, 1.0, 1.0, 0.5];
        let a = DenseMatrix::from_fn(6, 7, |i, j| x[i] * y[j]);
        let q = randomized_range(&a, 1, 5, 2, RngState::new(2)).unwrap();
        assert!(residual(&q, &a) < 1e-12);
    }

    #[test]
    fn bad_rank_and_zero_input() {
        let a = RngState::new(0).gaussian_matrix(5, 4);
        assert!(matches!(
            randomized_range(&a, 3, 2, 1, RngState::new(0)),
            Err(LotusError::InvalidRank { .. })
        ));
        assert!(matches!(
            randomized_range(&a, 0, 0, 1, RngState::new(0)),
            Err(LotusError::InvalidRank { .. })
        ));
        assert!(matches!(
            randomized_range(&DenseMatrix::zeros(5, 4), 2, 1, 1, RngState::new(0)),
            Err(LotusError::RankDeficient { column: 0, .. })
        ));
    }

    #[test]
    fn deterministic_for_fixed_state() {
        let a = RngState::new(5).gaussian_matrix(20, 16);
        let q1 = randomized_range(&a, 4, 5, 2, RngState::new(99)).unwrap();
        let q2 = randomized_range(&a, 4, 5, 2, RngState::new(99)).unwrap();
        assert_eq!(q1.as_slice(), q2.as_slice());
    }
}

//! Exact SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! The input is first reduced by a Householder QR. This is the accuracy
//! reference for the randomized range finder and the projector source for the
//! fixed-interval baseline. It is O(sweeps · n² · m) and makes no attempt at
//! blocking.

use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, DenseMatrix};
use super::qr::pivoted_qr;
use crate::error::{LotusError, Result};

/// Maximum number of Jacobi sweeps before reporting non-convergence.
pub const MAX_SWEEPS: usize = 60;

/// Column pairs with `|<a_p, a_q>| <= tol * |a_p| |a_q|` count as orthogonal,
/// where `tol = max(ORTHO_TOL, sqrt(m) * eps)` for columns of length `m`.
pub const ORTHO_TOL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    /// `m x k`, orthonormal columns.
    pub u: DenseMatrix,
    /// Length `k`, nonincreasing, nonnegative.
    pub singular_values: Vec<f64>,
    /// `n x k`, orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdResult {
    /// `u · diag(s) · vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        let k = self.singular_values.len();
        for i in 0..us.rows() {
            for j in 0..k {
                us.set(i, j, us.get(i, j) * self.singular_values[j]);
            }
        }
        us.matmul_t(&self.v).expect("u and v share k columns")
    }
}

/// Squared relative column norm below which a column takes no part in rotations.
const NEGLIGIBLE_SQ: f64 = 1e-30 * 1e-30;

/// Columns stored contiguously: column `j` is `data[j*len..(j+1)*len]`.
struct ColumnSet {
    len: usize,
    data: Vec<f64>,
}

impl ColumnSet {
    fn from_columns_of(a: &DenseMatrix) -> Self {
        let t = a.transpose();
        Self {
            len: a.rows(),
            data: t.into_vec(),
        }
    }

    fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { len: n, data }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.len..(j + 1) * self.len]
    }

    fn pair_mut(&mut self, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(p != q);
        let len = self.len;
        if p < q {
            let (head, tail) = self.data.split_at_mut(q * len);
            (&mut head[p * len..(p + 1) * len], &mut tail[..len])
        } else {
            let (head, tail) = self.data.split_at_mut(p * len);
            (&mut tail[..len], &mut head[q * len..(q + 1) * len])
        }
    }

    fn rotate(&mut self, p: usize, q: usize, c: f64, s: f64) {
        let (xp, xq) = self.pair_mut(p, q);
        for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
            let (va, vb) = (*a, *b);
            *a = c * va - s * vb;
            *b = s * va + c * vb;
        }
    }
}

/// Orthogonalizes the columns of `w` in place, accumulating the rotations
/// into `v` when given.
fn hestenes(w: &mut ColumnSet, ncols: usize, mut v: Option<&mut ColumnSet>) -> Result<()> {
    let mut norms: Vec<f64> = (0..ncols).map(|j| dot(w.col(j), w.col(j))).collect();
    let tol = ORTHO_TOL.max((w.len as f64).sqrt() * f64::EPSILON);
    let mut residual = f64::INFINITY;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        residual = 0.0_f64;
        // columns this small relative to the largest are numerically zero
        let negligible = norms.iter().fold(0.0_f64, |m, &n| m.max(n)) * NEGLIGIBLE_SQ;
        // pairs in order of decreasing column norm
        let mut order: Vec<usize> = (0..ncols).collect();
        order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
        for (ip, &p) in order.iter().enumerate() {
            for &q in &order[ip + 1..] {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(w.col(p), w.col(q));
                let off = gamma.abs() / (alpha * beta).sqrt();
                residual = residual.max(off);
                if off <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                w.rotate(p, q, c, s);
                if let Some(v) = v.as_deref_mut() {
                    v.rotate(p, q, c, s);
                }
                norms[p] = (alpha - t * gamma).max(0.0);
                norms[q] = (beta + t * gamma).max(0.0);
            }
        }
        if !rotated {
            return Ok(());
        }
        // cached norms drift under repeated updates
        for (j, n) in norms.iter_mut().enumerate() {
            *n = dot(w.col(j), w.col(j));
        }
    }
    Err(LotusError::SvdNotConverged {
        sweeps: MAX_SWEEPS,
        residual,
    })
}

/// Orthonormalizes `cols` (unit vectors of length `len`, some possibly
/// missing) by filling `None` slots with standard-basis vectors projected off
/// everything already present.
fn complete_basis(len: usize, cols: &mut [Option<Vec<f64>>]) {
    for slot in 0..cols.len() {
        if cols[slot].is_some() {
            continue;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..len {
            let mut cand = vec![0.0; len];
            cand[e] = 1.0;
            // two passes of Gram-Schmidt
            for _ in 0..2 {
                for c in cols.iter().flatten() {
                    let proj = dot(c, &cand);
                    axpy(-proj, c, &mut cand);
                }
            }
            let n = dot(&cand, &cand).sqrt();
            if best.as_ref().is_none_or(|(bn, _)| n > *bn + 1e-12) {
                best = Some((n, cand));
            }
            if n > 0.7 {
                break;
            }
        }
        let (n, mut cand) = best.expect("len > 0");
        cand.iter_mut().for_each(|x| *x /= n);
        cols[slot] = Some(cand);
    }
}

/// Sorted singular triplets of a tall matrix.
struct TallSvd {
    u_cols: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    v_cols: Vec<Vec<f64>>,
}

/// QR-preconditioned Jacobi: with `AP = QR`, orthogonalizing the columns of
/// `Rᵀ` as `Rᵀ J = W` gives `A = (QJ) Σ (P W Σ⁻¹)ᵀ`. Pivoting grades the rows
/// of `R`, and Jacobi on `Rᵀ` then needs far fewer sweeps than on `A`.
fn tall_svd(a: &DenseMatrix) -> Result<TallSvd> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    let (qr, perm) = pivoted_qr(a)?;
    let a_perm = DenseMatrix::from_fn(m, n, |i, k| a.get(i, perm[k]));
    let r = qr.q.t_matmul(&a_perm)?;
    let mut w = ColumnSet::from_columns_of(&r.transpose());
    let mut j = ColumnSet::identity(n);
    hestenes(&mut w, n, Some(&mut j))?;

    let sigma_raw: Vec<f64> = (0..n).map(|k| dot(w.col(k), w.col(k)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &k| sigma_raw[k].total_cmp(&sigma_raw[i]));
    let sigma_max = sigma_raw[order[0]];
    let zero_tol = sigma_max * (m as f64) * f64::EPSILON;

    let mut v_slots: Vec<Option<Vec<f64>>> = order
        .iter()
        .map(|&k| {
            let s = sigma_raw[k];
            (s > zero_tol && s > 0.0).then(|| {
                let col = w.col(k);
                let mut v = vec![0.0; n];
                for (i, &orig) in perm.iter().enumerate() {
                    v[orig] = col[i] / s;
                }
                v
            })
        })
        .collect();
    complete_basis(n, &mut v_slots);

    let j_sorted = DenseMatrix::from_fn(n, n, |i, k| j.col(order[k])[i]);
    let u = qr.q.matmul(&j_sorted)?;
    Ok(TallSvd {
        u_cols: (0..n).map(|k| u.column(k)).collect(),
        sigma: order.iter().map(|&k| sigma_raw[k]).collect(),
        v_cols: v_slots.into_iter().map(|c| c.expect("completed")).collect(),
    })
}

fn from_columns(len: usize, cols: &[Vec<f64>]) -> DenseMatrix {
    DenseMatrix::from_fn(len, cols.len(), |i, j| cols[j][i])
}

/// Full thin SVD: `a = u · diag(s) · vᵀ` with `k = min(m, n)`.
pub fn exact_svd(a: &DenseMatrix) -> Result<SvdResult> {
    a.check_finite()?;
    let (m, n) = a.shape();
    if m >= n {
        let t = tall_svd(a)?;
        Ok(SvdResult {
            u: from_columns(m, &t.u_cols),
            singular_values: t.sigma,
            v: from_columns(n, &t.v_cols),
        })
    } else {
        let t = tall_svd(&a.transpose())?;
        Ok(SvdResult {
            u: from_columns(m, &t.v_cols),
            singular_values: t.sigma,
            v: from_columns(n, &t.u_cols),
        })
    }
}

/// Top-`rank` left singular vectors (`m x rank`).
pub fn exact_left_singular_vectors(a: &DenseMatrix, rank: usize) -> Result<DenseMatrix> {
    a.check_finite()?;
    let (m, n) = a.shape();
    if rank == 0 || rank > m.min(n) {
        return Err(LotusError::InvalidRank {
            rank,
            oversample: 0,
            rows: m,
            cols: n,
        });
    }
    let basis = if m >= n {
        from_columns(m, &tall_svd(a)?.u_cols)
    } else {
        from_columns(m, &tall_svd(&a.transpose())?.v_cols)
    };
    Ok(basis.leading_columns(rank))
}

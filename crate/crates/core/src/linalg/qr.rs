//! Householder QR, used to orthonormalize sketches and power-iteration blocks.

use super::matrix::{axpy, dot, DenseMatrix};
use crate::error::{LotusError, Result};

/// A diagonal entry of R smaller than this times the largest input magnitude
/// marks a rank-deficient column.
pub const RANK_TOL: f64 = 1e-12;

pub(crate) struct ThinQr {
    /// `m x n`, orthonormal columns, sign-fixed so that `diag(R) >= 0`.
    pub q: DenseMatrix,
    /// `|R_jj|` for each column.
    pub r_diag: Vec<f64>,
    /// Largest absolute entry of the input, the scale for [`ThinQr::first_deficient`].
    pub scale: f64,
}

impl ThinQr {
    pub fn first_deficient(&self, rel_tol: f64) -> Option<usize> {
        let threshold = rel_tol * self.scale;
        self.r_diag.iter().position(|&r| r < threshold || self.scale == 0.0)
    }
}

/// Householder thin QR of a tall matrix. Always returns orthonormal columns,
/// even when the input is rank deficient; callers decide what deficiency means.
pub(crate) fn thin_qr(a: &DenseMatrix) -> Result<ThinQr> {
    householder(a, false).map(|(qr, _)| qr)
}

/// `A P = Q R` with column pivoting: at every step the remaining column of
/// largest norm goes next, so `|R_kk|` is nonincreasing. Returns the
/// permutation as `perm[k]` = original index of the `k`-th column.
pub(crate) fn pivoted_qr(a: &DenseMatrix) -> Result<(ThinQr, Vec<usize>)> {
    householder(a, true)
}

fn householder(a: &DenseMatrix, pivot: bool) -> Result<(ThinQr, Vec<usize>)> {
    let (m, n) = a.shape();
    if m < n {
        return Err(LotusError::DimensionMismatch {
            op: "qr (needs rows >= cols)",
            left: a.shape(),
            right: (n, n),
        });
    }
    // column-major working copy: cols[j] is column j of a
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut r_signed = Vec::with_capacity(n);
    let mut perm: Vec<usize> = (0..n).collect();

    for k in 0..n {
        if pivot {
            let tail_norm = |c: &Vec<f64>| dot(&c[k..], &c[k..]);
            let best = (k..n)
                .max_by(|&i, &j| tail_norm(&cols[i]).total_cmp(&tail_norm(&cols[j])).then(j.cmp(&i)))
                .expect("k < n");
            cols.swap(k, best);
            perm.swap(k, best);
        }
        let x = &cols[k][k..];
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            reflectors.push(Vec::new());
            r_signed.push(0.0);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm_sq = dot(&v, &v);
        if vnorm_sq > 0.0 {
            for col in cols.iter_mut().skip(k + 1) {
                let tail = &mut col[k..];
                let coef = -2.0 * dot(&v, tail) / vnorm_sq;
                axpy(coef, &v, tail);
            }
            reflectors.push(v.iter().map(|vi| vi / vnorm_sq.sqrt()).collect());
        } else {
            reflectors.push(Vec::new());
        }
        r_signed.push(alpha);
    }

    // Q = H_0 H_1 ... H_{n-1} [I_n; 0]
    let mut q_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for (j, q_col) in q_cols.iter_mut().enumerate() {
        for k in (0..n.min(j + 1)).rev() {
            let v = &reflectors[k];
            if v.is_empty() {
                continue;
            }
            let tail = &mut q_col[k..];
            let coef = -2.0 * dot(v, tail);
            axpy(coef, v, tail);
        }
        if r_signed[j] < 0.0 {
            q_col.iter_mut().for_each(|x| *x = -*x);
        }
    }

    let q = DenseMatrix::from_fn(m, n, |i, j| q_cols[j][i]);
    let qr = ThinQr {
        q,
        r_diag: r_signed.iter().map(|r| r.abs()).collect(),
        scale: a.max_abs(),
    };
    Ok((qr, perm))
}

/// Orthonormal basis for the column span of a full-column-rank matrix.
///
/// The result has the shape of `a`, satisfies `QᵀQ = I`, and has the same
/// column span as `a`. Columns are sign-normalized (positive R diagonal), so
/// an input that is already orthonormal comes back unchanged up to rounding.
pub fn qr_orthonormalize(a: &DenseMatrix) -> Result<DenseMatrix> {
    qr_orthonormalize_with_tol(a, RANK_TOL)
}

pub fn qr_orthonormalize_with_tol(a: &DenseMatrix, rel_tol: f64) -> Result<DenseMatrix> {
    let qr = thin_qr(a)?;
    if let Some(column) = qr.first_deficient(rel_tol) {
        return Err(LotusError::RankDeficient {
            column,
            magnitude: qr.r_diag[column],
        });
    }
    Ok(qr.q)
}

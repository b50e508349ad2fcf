//! Low-rank gradient projector.
//!
//! A gradient `G` of shape `m x n` is compressed along its shorter side:
//! `Left` keeps `Qᵀ G` (`rank x n`) for `m <= n`, `Right` keeps `G Q`
//! (`m x rank`) for `m > n`. Projectors are immutable; switching subspaces
//! means building a new one.

use serde::{Deserialize, Serialize};

use crate::error::{LotusError, Result, Shape};
use crate::linalg::{exact_left_singular_vectors, randomized_range, DenseMatrix, RangeFinderConfig, RngState};

/// Tolerance on `QᵀQ = I` when a projector is assembled from a caller basis.
pub const BASIS_ORTHO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// The shorter dimension gets projected.
    pub fn for_shape((rows, cols): Shape) -> Self {
        if rows <= cols {
            Side::Left
        } else {
            Side::Right
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionMethod {
    /// Gaussian sketch + power iteration.
    Randomized,
    /// Top singular vectors from the Jacobi SVD.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    pub method: ProjectionMethod,
    pub range: RangeFinderConfig,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        Self {
            method: ProjectionMethod::Randomized,
            range: RangeFinderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    basis: DenseMatrix,
    side: Side,
    created_at_step: u64,
}

impl Projector {
    /// Wraps an existing orthonormal basis.
    pub fn from_basis(basis: DenseMatrix, side: Side, created_at_step: u64) -> Result<Self> {
        let gram = basis.t_matmul(&basis)?;
        let err = gram.max_abs_diff(&DenseMatrix::identity(basis.cols()));
        if err > BASIS_ORTHO_TOL || basis.cols() > basis.rows() {
            return Err(LotusError::InvalidConfig(format!(
                "projector basis {:?} is not orthonormal (max |QᵀQ - I| = {err:e})",
                basis.shape()
            )));
        }
        Ok(Self {
            basis,
            side,
            created_at_step,
        })
    }

    pub fn basis(&self) -> &DenseMatrix {
        &self.basis
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    pub fn created_at_step(&self) -> u64 {
        self.created_at_step
    }

    /// Shape of `project(g)` for a gradient of shape `full`.
    pub fn compressed_shape(&self, (rows, cols): Shape) -> Shape {
        match self.side {
            Side::Left => (self.rank(), cols),
            Side::Right => (rows, self.rank()),
        }
    }

    fn check_full(&self, op: &'static str, g: &DenseMatrix) -> Result<()> {
        let dim = match self.side {
            Side::Left => g.rows(),
            Side::Right => g.cols(),
        };
        if dim != self.basis.rows() {
            return Err(LotusError::DimensionMismatch {
                op,
                left: self.basis.shape(),
                right: g.shape(),
            });
        }
        Ok(())
    }

    /// `Qᵀ G` (left) or `G Q` (right).
    pub fn project(&self, g_full: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_full("project", g_full)?;
        match self.side {
            Side::Left => self.basis.t_matmul(g_full),
            Side::Right => g_full.matmul(&self.basis),
        }
    }

    /// `Q G_low` (left) or `G_low Qᵀ` (right).
    pub fn project_back(&self, g_low: &DenseMatrix) -> Result<DenseMatrix> {
        let ok = match self.side {
            Side::Left => g_low.rows() == self.rank(),
            Side::Right => g_low.cols() == self.rank(),
        };
        if !ok {
            return Err(LotusError::DimensionMismatch {
                op: "project_back",
                left: self.basis.shape(),
                right: g_low.shape(),
            });
        }
        match self.side {
            Side::Left => self.basis.matmul(g_low),
            Side::Right => g_low.matmul_t(&self.basis),
        }
    }

    /// Orthogonal projection onto the subspace: `project_back(project(g))`.
    pub fn apply(&self, g_full: &DenseMatrix) -> Result<DenseMatrix> {
        self.project_back(&self.project(g_full)?)
    }
}

/// Builds the projector for `g_full` at `rank`.
///
/// When `rank` equals the shorter dimension the subspace is the whole space
/// and the canonical identity basis is used, so full-rank projection is an
/// exact no-op. Oversampling is clamped to what the shape allows.
pub fn compute_projector(
    g_full: &DenseMatrix,
    rank: usize,
    rng: RngState,
    config: &ProjectorConfig,
    step: u64,
) -> Result<Projector> {
    let (m, n) = g_full.shape();
    let short = m.min(n);
    if rank == 0 || rank > short {
        return Err(LotusError::InvalidRank {
            rank,
            oversample: 0,
            rows: m,
            cols: n,
        });
    }
    g_full.check_finite()?;
    if g_full.is_zero() {
        return Err(LotusError::ZeroGradient);
    }
    let side = Side::for_shape(g_full.shape());
    if rank == short {
        return Projector::from_basis(DenseMatrix::identity(short), side, step);
    }
    let oriented;
    let target = match side {
        Side::Left => g_full,
        Side::Right => {
            oriented = g_full.transpose();
            &oriented
        }
    };
    let basis = match config.method {
        ProjectionMethod::Randomized => {
            let oversample = config.range.oversample.min(short - rank);
            randomized_range(target, rank, oversample, config.range.power_iters, rng)?
        }
        ProjectionMethod::Exact => exact_left_singular_vectors(target, rank)?,
    };
    Ok(Projector {
        basis,
        side,
        created_at_step: step,
    })
}

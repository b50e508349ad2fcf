use thiserror::Error;

/// (rows, cols) of a matrix, used in error messages.
pub type Shape = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LotusError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("matrix data has length {len}, expected {rows}x{cols}")]
    InvalidShape { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("rank deficiency at column {column} (|r_jj| = {magnitude:e})")]
    RankDeficient { column: usize, magnitude: f64 },
    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    SvdNotConverged { sweeps: usize, residual: f64 },
    #[error("rank {rank} (+ oversample {oversample}) invalid for a {rows}x{cols} matrix")]
    InvalidRank {
        rank: usize,
        oversample: usize,
        rows: usize,
        cols: usize,
    },
    #[error("gradient is identically zero")]
    ZeroGradient,
    #[error("non-finite gradient entry {value} at ({row}, {col})")]
    NonFiniteGradient { row: usize, col: usize, value: f64 },
    #[error("displacement tracker used before initialization")]
    NotInitialized,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, LotusError>;

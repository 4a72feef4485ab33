use thiserror::Error;

/// Errors produced by mesh construction, partitioning and solver setup.
#[derive(Debug, Error)]
pub enum Error {
    #[error("level {0} is out of range (max level {1})")]
    LevelOutOfRange(usize, usize),
    #[error("invalid refinement depth {depth} for sequence `{kind}`: {reason}")]
    InvalidDepth {
        kind: &'static str,
        depth: usize,
        reason: &'static str,
    },
    #[error("dimension {0} is not supported here")]
    UnsupportedDim(usize),
    #[error("cell is not part of this mesh")]
    CellNotInMesh,
    #[error("cross-tree neighbor lookup is not implemented (tree id {0})")]
    CrossTree(u32),
    #[error("number of ranks must be at least 1")]
    InvalidRankCount,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("marked cell is not a leaf of this mesh")]
    NotALeaf,
    #[error("transfer requires consecutive levels, got {0} and {1}")]
    NonConsecutiveLevels(usize, usize),
    #[error("zero diagonal entry at dof {0}; operator is not assembled correctly")]
    ZeroDiagonal(usize),
    #[error("coarse matrix is singular; missing Dirichlet condensation?")]
    SingularCoarseMatrix,
    #[error("dimension mismatch: expected vector length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(
        "solver did not converge after {iterations} iterations (relative residual {residual:.3e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

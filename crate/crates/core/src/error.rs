use thiserror::Error;

/// Errors produced by the qemlab numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate (zero-volume) box")]
    DegenerateBox,

    #[error("empty conditioning region")]
    EmptyRegion,

    #[error("point {0:?} lies on a branch boundary")]
    BranchBoundary([f64; 2]),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("no positive spectral radius")]
    NoPositiveSpectralRadius,

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("degenerate eigendata: right and left eigenvectors have disjoint supports")]
    DegenerateEigendata,

    #[error("ensemble extinct at time {time}")]
    EnsembleExtinct { time: usize },

    #[error("preorder has a cycle: {0:?}")]
    Cycle(Vec<u32>),

    #[error("basic sets {0} and {1} have equal topological pressure")]
    PressureTie(u32, u32),

    #[error("unknown node id {0}")]
    UnknownNode(u32),

    #[error("invalid rank {rank} (valid ranks are 1..={n})")]
    InvalidRank { rank: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

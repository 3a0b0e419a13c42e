use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cell index {index} out of range for level {level} in dimension {dim}")]
    IndexOutOfRange { level: u32, index: usize, dim: usize },

    #[error("invalid problem parameters: {0}")]
    InvalidSpec(String),

    #[error("problem (r={r}, p={p}, q={q}, d1={d1}, d2={d2}) is not solvable")]
    NotSolvable {
        r: u32,
        p: String,
        q: String,
        d1: u32,
        d2: u32,
    },

    #[error("budget {n} below minimal n(0) = {n0}")]
    BudgetBelowMinimum { n: u64, n0: u64 },

    #[error("budget must be at least 1")]
    EmptyBudget,

    #[error("adaptive estimator requires 2 < p (got p = {0})")]
    AdaptiveRegime(String),

    #[error("adaptive algorithm requires 2 < p < q (got p = {p}, q = {q})")]
    GapRegime { p: String, q: String },

    #[error("embedding condition required for deterministic point evaluation")]
    EmbeddingRequired,

    #[error("smoothness r = 0 cannot be handled by Lagrange interpolation")]
    ZeroSmoothness,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("missing sample for node {0}")]
    MissingSample(usize),

    #[error("empty tensor")]
    Empty,

    #[error("resolution {got} too small, need at least {need} points per axis")]
    ResolutionTooSmall { got: usize, need: usize },

    #[error("instance {label}: closed-form parametric integral disagrees with quadrature by {diff:e}")]
    FubiniMismatch { label: String, diff: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

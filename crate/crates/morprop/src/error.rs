use thiserror::Error;

/// Which layer-local subproblem a backward pass was solving when it failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemSide {
    /// Subproblem over the layer state input (the `x` form).
    State,
    /// Subproblem over the layer parameters (the `w` form).
    Params,
}

impl std::fmt::Display for SubproblemSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SubproblemSide::State => write!(f, "x"),
            SubproblemSide::Params => write!(f, "w"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: dimension mismatch, expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matvec: matrix is {rows}x{cols} but vector has dim {dim}")]
    MatVecDim { rows: usize, cols: usize, dim: usize },

    #[error("non-finite value encountered at coordinate {coord} in {context}")]
    NonFinite { context: &'static str, coord: usize },

    #[error("forward pass produced a non-finite state at layer {layer}")]
    NonFiniteState { layer: usize },

    #[error("{context}: iterations diverged, last objective values {trace:?}")]
    Divergence { context: &'static str, trace: Vec<f64> },

    #[error("backward pass diverged at layer {layer}, {side} form: {source}")]
    BackwardDivergence {
        layer: usize,
        side: SubproblemSide,
        #[source]
        source: Box<Error>,
    },

    #[error("dual ascent objective decreased over {streak} consecutive steps (step-size assumptions violated), trace {trace:?}")]
    AscentStalled { streak: usize, trace: Vec<f64> },

    #[error("no closed-form proximal operator for this objective kind; fall back to the iterative path")]
    NotClosedForm,

    #[error("linear system is singular or numerically rank-deficient")]
    SingularSystem,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("IDX file {path}: expected magic {expected:#010x}, got {got:#010x}")]
    IdxMagic { path: String, expected: u32, got: u32 },

    #[error("IDX file {path}: truncated ({detail})")]
    IdxTruncated { path: String, detail: String },

    #[error("IDX label {value} out of range [0, 9]")]
    IdxLabelRange { value: u8 },

    #[error("config error: {0}")]
    Config(String),

    #[error("all {count} grid-search candidates diverged")]
    AllCandidatesDiverged { count: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid format: {0}")]
    Format(String),

    #[error("empty edge set")]
    EmptyGraph,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown operator `{0}`")]
    UnknownOp(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("arithmetic overflow: {0}")]
    Overflow(String),

    #[error("output would have {required} edges, above the configured cap of {cap}")]
    EdgeCap { required: u64, cap: u64 },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {loss}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("forward cache does not match: {0}")]
    StaleCache(String),

    #[error("no users with test interactions to evaluate")]
    NoEvaluableUsers,

    #[error("region of {region} bytes is below the floor of {floor} bytes")]
    RegionTooSmall { region: usize, floor: usize },

    #[error("memory node {node} not available (available: {available:?})")]
    NodeUnavailable { node: u32, available: Vec<u32> },

    #[error("{requested} workers requested but only {available} available")]
    WorkersUnavailable { requested: usize, available: usize },

    #[error("memory binding failed: {0}")]
    Binding(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::EmptyGraph => "empty_graph",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Shape(_) => "shape",
            Error::UnknownOp(_) => "unknown_op",
            Error::Unsupported(_) => "unsupported",
            Error::Overflow(_) => "overflow",
            Error::EdgeCap { .. } => "edge_cap",
            Error::Sampling(_) => "sampling",
            Error::NonFinite(_) => "non_finite",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::StaleCache(_) => "stale_cache",
            Error::NoEvaluableUsers => "no_evaluable_users",
            Error::RegionTooSmall { .. } => "region_too_small",
            Error::NodeUnavailable { .. } => "node_unavailable",
            Error::WorkersUnavailable { .. } => "workers_unavailable",
            Error::Binding(_) => "binding",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

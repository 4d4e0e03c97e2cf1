use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} values")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("empty neighbourhood: segment {0} has no elements")]
    EmptyNeighbourhood(usize),

    #[error("invalid segment ids: {0}")]
    InvalidSegments(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter {index} has no gradient")]
    MissingGrad { index: usize },

    #[error("batch norm needs at least one row")]
    EmptyBatch,

    #[error("non-finite value produced by {context}")]
    NonFinite { context: String },

    #[error("GDP derived only for beta=0 (got beta={0})")]
    GdpRequiresZeroBeta(f64),

    #[error("additive distributive operator requires alpha=0 and beta=0 (got alpha={alpha}, beta={beta})")]
    AdditiveRequiresMeanForm { alpha: f64, beta: f64 },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("cannot place {requested} edges: only {available} non-self-loop pairs exist")]
    TooManyEdges { requested: usize, available: usize },

    #[error("degenerate target: truth is constant")]
    DegenerateTarget,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("need at least two samples for a correlation, got {0}")]
    TooFewSamples(usize),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown {kind} '{name}'; valid names: {valid}")]
    UnknownName {
        kind: &'static str,
        name: String,
        valid: String,
    },

    #[error("io error: {0}")]
    Io(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("no series")]
    NoSeries,

    #[error("series {id}: non-finite value at frame {frame}")]
    NonFinite { id: String, frame: usize },

    #[error("channel count mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("class {class:?} has {size} members, at least {needed} required")]
    ClassTooSmall { class: String, size: usize, needed: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("passive-set system is singular after ridge fallback")]
    Singular,

    #[error("active-set iteration cap of {0} exceeded")]
    IterationCap(usize),

    #[error("atom {0} is degenerate (zero feature-space norm)")]
    DegenerateAtom(usize),

    #[error("non-finite objective")]
    NonFiniteObjective,

    #[error("coding query {index} failed: {source}")]
    Coding {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model format: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("timestamps not strictly increasing at line {line}")]
    NonMonotonicTime { line: u64 },

    #[error("acceleration {value} g out of device range at line {line}")]
    OutOfRange { line: u64, value: f64 },

    #[error("negative gas volume: {0}")]
    NegativeGasVolume(f64),

    #[error("negative input: {0}")]
    NegativeInput(f64),

    #[error("non-positive input: {0}")]
    NonPositiveInput(f64),

    #[error("streams do not overlap in time")]
    NoOverlap,

    #[error("aggregation window contains no samples")]
    EmptyWindow,

    #[error("window does not divide into an integral number of bins ({0})")]
    NonIntegralBinCount(f64),

    #[error("channel {0} has zero variance")]
    DegenerateChannel(usize),

    #[error("unknown activity label `{0}`")]
    UnknownLabel(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("backward pass requires a training-mode forward cache")]
    MissingCache,

    #[error("static features and static branch disagree: {0}")]
    StaticBranchMissing(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("insufficient subjects: {0}")]
    InsufficientSubjects(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("reference series has zero variance")]
    ZeroVariance,

    #[error("paired differences have zero variance")]
    DegenerateDifferences,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged: {0}")]
    Diverged(String),
}

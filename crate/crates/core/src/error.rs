use thiserror::Error;

/// Errors produced anywhere in the registration pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("count mismatch: expected {expected}, found {found}")]
    CountMismatch { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate extent along axis {axis}")]
    DegenerateExtent { axis: usize },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("approximation failure: {0}")]
    ApproximationFailure(String),

    #[error("all target mass assigned to outliers (N_P = {0:e})")]
    AllOutliers(f64),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("non-finite state at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

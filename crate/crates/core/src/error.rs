use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (tried jitters up to {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("triangular matrix has a zero on its diagonal at index {index}")]
    SingularMatrix { index: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("operation not registered with the gradient tape: {0}")]
    UnregisteredOperation(String),

    #[error("dataset has no points")]
    EmptyDataset,

    #[error("non-finite score at step {step}, particle {particle}")]
    NonFiniteScore { step: usize, particle: usize },

    #[error("objective or gradient is not finite")]
    NonFiniteValue,

    #[error("sub-gamma domain violated: c*beta/m = {ratio} must be < 1")]
    SubGammaDomain { ratio: f64 },

    #[error("empty list: {0}")]
    EmptyList(&'static str),

    #[error("distribution q puts mass {mass} where p is zero (index {index})")]
    SupportViolation { index: usize, mass: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("task {0} has no data rows")]
    EmptyTask(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Wraps the error with a location annotation such as `"step 12, task 3"`.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping any context annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// Short machine-readable tag used in structured error output.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::SingularMatrix { .. } => "SingularMatrix",
            Error::EmptyInput(_) => "EmptyInput",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::UnregisteredOperation(_) => "UnregisteredOperation",
            Error::EmptyDataset => "EmptyDataset",
            Error::NonFiniteScore { .. } => "NonFiniteScore",
            Error::NonFiniteValue => "NonFiniteValue",
            Error::SubGammaDomain { .. } => "SubGammaDomain",
            Error::EmptyList(_) => "EmptyList",
            Error::SupportViolation { .. } => "SupportViolation",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Schema(_) => "SchemaError",
            Error::EmptyTask(_) => "EmptyTask",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
            Error::Json(_) => "JsonError",
            Error::Context { .. } => unreachable!(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

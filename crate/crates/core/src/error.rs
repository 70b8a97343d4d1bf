use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// One of the inferred bias groups is empty or too small to match against.
    #[error("no overlap between bias groups: {0}")]
    Overlap(String),

    #[error("conditioning event has zero probability: {0}")]
    Support(String),

    #[error("unsupported dataset: {0}")]
    Unsupported(String),

    #[error("degenerate bias mechanism: {0}")]
    DegenerateBias(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(csv::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(io) => Error::Io(std::io::Error::new(io.kind(), io.to_string())),
            _ => Error::Csv(e),
        }
    }
}

impl Error {
    /// Stable machine-readable error class, printed by the CLI.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Divergence(_) => "training",
            Error::Schema(_) => "schema",
            Error::Data(_) | Error::Csv(_) => "data",
            Error::Parameter(_) => "parameter",
            Error::Overlap(_) => "overlap",
            Error::Support(_) => "support",
            Error::Unsupported(_) => "unsupported",
            Error::DegenerateBias(_) => "degenerate-bias",
            Error::Usage(_) => "usage",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Parameter(_) => 2,
            Error::Schema(_)
            | Error::Data(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Unsupported(_)
            | Error::Shape(_)
            | Error::DegenerateBias(_)
            | Error::Overlap(_)
            | Error::Support(_) => 3,
            Error::Divergence(_) => 4,
            Error::Io(_) => 1,
        }
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

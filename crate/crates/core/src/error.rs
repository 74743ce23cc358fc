use std::path::PathBuf;

/// Errors produced by the library.
///
/// The CLI maps these onto exit codes: I/O failures exit with 2, everything
/// else (shape, input, capacity, metric, generation) exits with 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor dimensions do not satisfy an operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// Inputs are structurally valid but violate a precondition.
    #[error("input error: {0}")]
    Input(String),

    /// More ground-truth instances than available queries.
    #[error("capacity error: {got} ground-truth instances but only {max} queries")]
    Capacity { got: usize, max: usize },

    /// Metric requested over an empty ground-truth set.
    #[error("undefined metric: no ground-truth instances to evaluate against")]
    UndefinedMetric,

    /// Synthetic scenario generation could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON manifest, prediction, or ground-truth file.
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that stem from the filesystem rather than the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

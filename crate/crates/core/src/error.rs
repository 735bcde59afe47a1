use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("eigensolver did not converge (off-diagonal residual {residual:.3e} after {sweeps} sweeps)")]
    Convergence { residual: f64, sweeps: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("length error: {0}")]
    Length(String),

    /// A zero-norm vector reached a map that normalizes its input.
    #[error("degenerate input{}: zero-norm vector", .row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    DegenerateInput { row: Option<usize> },

    #[error("degenerate kernel matrix: {0}")]
    DegenerateKernel(String),

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a label (file name, dataset name) for diagnostics.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_usage(&self) -> bool {
        matches!(self.root(), Error::Usage(_))
    }
}

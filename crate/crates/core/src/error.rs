use thiserror::Error;

pub type Result<T> = std::result::Result<T, GgpError>;

#[derive(Debug, Error)]
pub enum GgpError {
    /// Malformed or inconsistent caller input (bad index, shape, file line).
    #[error("input error: {0}")]
    Input(String),

    /// Linear algebra or optimization broke down.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Operation not valid in the current state (e.g. selecting from an empty pool).
    #[error("state error: {0}")]
    State(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GgpError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        GgpError::Input(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        GgpError::Numerical(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        GgpError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable kind, used for error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            GgpError::Input(_) | GgpError::Io { .. } => "input",
            GgpError::Numerical(_) => "numerical",
            GgpError::State(_) => "state",
            GgpError::Unsupported(_) => "unsupported",
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Format { line: Option<usize>, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("sweep error: {0}")]
    Sweep(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn format(message: impl Into<String>) -> Self {
        Error::Format { line: None, message: message.into() }
    }

    pub fn format_at(line: usize, message: impl Into<String>) -> Self {
        Error::Format { line: Some(line), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

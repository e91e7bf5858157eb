use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DgaError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DgaError {
    /// Short stable tag used in machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            DgaError::Shape(_) => "shape",
            DgaError::Domain(_) => "domain",
            DgaError::Config(_) => "config",
            DgaError::State(_) => "state",
            DgaError::Format { .. } => "format",
            DgaError::Io { .. } => "io",
            DgaError::Json(_) => "json",
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        DgaError::Format { path: path.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DgaError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = DgaError> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(DgaError::Shape(format!("{what}: length {got}, expected {expected}")));
    }
    Ok(())
}

pub(crate) fn check_binary(what: &str, bits: &[u8]) -> Result<()> {
    if let Some(pos) = bits.iter().position(|&b| b > 1) {
        return Err(DgaError::Domain(format!("{what}: value {} at index {pos} is not 0/1", bits[pos])));
    }
    Ok(())
}

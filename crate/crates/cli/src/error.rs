use std::path::{Path, PathBuf};

use serde::Serialize;

/// Failure of a file operation or subcommand.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    Json { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Data {
        path: PathBuf,
        #[source]
        source: deocc_core::Error,
    },
    #[error(transparent)]
    Core(#[from] deocc_core::Error),
    #[error("usage: {0}")]
    Usage(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Machine-readable form of a [`CliError`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn json(path: impl AsRef<Path>, e: serde_json::Error) -> Self {
        Self::Json {
            path: path.as_ref().to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn data(path: impl AsRef<Path>, source: deocc_core::Error) -> Self {
        Self::Data {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn report(&self) -> ErrorReport {
        let (kind, path, core) = match self {
            Self::Io { path, .. } => ("io", Some(path), None),
            Self::Image { path, .. } => ("image", Some(path), None),
            Self::Json { path, .. } => ("json", Some(path), None),
            Self::Data { path, source } => ("data", Some(path), Some(source)),
            Self::Core(e) => ("data", None, Some(e)),
            Self::Usage(_) => ("usage", None, None),
        };
        let field = match core {
            Some(deocc_core::Error::ConfigMismatch { field, .. }) => Some(field.clone()),
            _ => None,
        };
        ErrorReport {
            kind: if field.is_some() {
                "config-mismatch"
            } else {
                kind
            },
            message: self.to_string(),
            path: path.map(|p| p.display().to_string()),
            field,
        }
    }
}

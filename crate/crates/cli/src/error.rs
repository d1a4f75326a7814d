use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing or unreadable artifact {path}: {reason}")]
    MissingArtifact { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] evsci_core::Error),
}

impl CliError {
    pub fn missing(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::MissingArtifact { path: path.into(), reason: err.to_string() }
    }

    /// 0 success, 2 invalid config, 3 io or missing artifact, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        use evsci_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Core(e) => match e {
                E::Io { .. } | E::MalformedHeader { .. } | E::MalformedRecord { .. } => 3,
                E::NonFiniteIterate { .. } => 4,
                _ => 2,
            },
        }
    }
}

/// Maps a failed artifact read to `MissingArtifact`, naming the file at fault.
pub(crate) fn artifact<T>(path: &std::path::Path, res: evsci_core::Result<T>) -> Result<T> {
    res.map_err(|e| {
        let at = match &e {
            evsci_core::Error::Io { path, .. }
            | evsci_core::Error::MalformedHeader { path, .. }
            | evsci_core::Error::MalformedRecord { path, .. } => path.clone(),
            _ => path.to_path_buf(),
        };
        CliError::missing(at, e)
    })
}

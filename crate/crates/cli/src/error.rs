use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("{0}")]
    Evolution(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Image { .. } => 3,
            CliError::Evolution(_) => 4,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<click2mask::Error> for CliError {
    fn from(e: click2mask::Error) -> Self {
        use click2mask::Error as E;
        match e {
            E::DimensionMismatch { .. } | E::OutOfBounds { .. } | E::InvalidArgument(_) | E::UnreachableArea { .. } => {
                CliError::Usage(e.to_string())
            }
            E::MaskCollapse | E::Backend(_) | E::EvolutionFailed { .. } | E::AllEvolutionsFailed(_) => {
                CliError::Evolution(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

use thiserror::Error;

use crate::dapw::DapwError;
use crate::demod::DemodError;
use crate::grid::GridError;
use crate::io::FormatError;
use crate::localize::LocalizeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error; each stage keeps its own error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Demod(#[from] DemodError),
    #[error(transparent)]
    Dapw(#[from] DapwError),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

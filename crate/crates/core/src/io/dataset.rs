use std::path::Path;

use super::FormatError;
use crate::grid::MultiPointRecording;
use crate::Result;

/// Converts an external dataset layout into a [`MultiPointRecording`].
///
/// Implementations own every assumption about the foreign layout: file
/// naming, units, channel-to-point mapping. The analysis side only ever sees
/// the converted recording.
pub trait DatasetAdapter {
    /// Short identifier used on the command line.
    fn name(&self) -> &str;

    /// Reads one case (a file or directory) from `path`.
    fn import(&self, path: &Path) -> Result<MultiPointRecording>;
}

/// Placeholder for the public measurement dataset, whose layout is not
/// documented. Always fails with [`FormatError::Unsupported`].
#[derive(Debug, Default, Clone, Copy)]
pub struct UnsupportedLayout;

impl DatasetAdapter for UnsupportedLayout {
    fn name(&self) -> &str {
        "public-dataset"
    }

    fn import(&self, path: &Path) -> Result<MultiPointRecording> {
        Err(FormatError::Unsupported(format!(
            "no adapter for the layout of {}; implement DatasetAdapter for it",
            path.display()
        ))
        .into())
    }
}

/// Runs `adapter` on `path` and checks the result is a consistent recording.
pub fn import_dataset(adapter: &dyn DatasetAdapter, path: &Path) -> Result<MultiPointRecording> {
    let rec = adapter.import(path)?;
    rec.validate().map_err(FormatError::Schema)?;
    Ok(rec)
}

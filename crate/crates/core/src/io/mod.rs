//! File formats: per-channel recordings, analysis reports and configuration.

mod dataset;
mod recording;
mod report;

use thiserror::Error;

pub use dataset::{import_dataset, DatasetAdapter, UnsupportedLayout};
pub use recording::{
    format_recording, parse_recording, read_binary_recording, read_recording, read_recording_dir, write_binary_recording,
    write_recording, write_recording_dir, RecordingFile, RECORDING_VERSION,
};
pub use report::{read_report, write_report, ReportBody, ReportFile, REPORT_VERSION};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("missing mandatory header key '{0}'")]
    MissingKey(&'static str),
    #[error("bad value for '{key}': {message}")]
    BadValue { key: String, message: String },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("header declares {declared} samples but payload holds {found}")]
    Truncated { declared: usize, found: usize },
    #[error("line {line}: {message}")]
    Payload { line: usize, message: String },
    #[error("{0}")]
    Schema(String),
    #[error("recording directory {0} holds no channel files")]
    EmptyDirectory(String),
    #[error("{0}")]
    Unsupported(String),
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::bench::{SuiteSettings, SuiteTable};
use crate::localize::{AnalysisSettings, LocalizationReport};
use crate::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// What a report file carries, together with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportBody {
    Localization {
        settings: AnalysisSettings,
        report: LocalizationReport,
    },
    Suite {
        settings: SuiteSettings,
        seed: u64,
        cases: usize,
        table: SuiteTable,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: u32,
    #[serde(flatten)]
    pub body: ReportBody,
}

impl ReportFile {
    pub fn new(body: ReportBody) -> Self {
        ReportFile {
            format_version: REPORT_VERSION,
            body,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values are always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let schema = |e: serde_json::Error| FormatError::Schema(e.to_string());
        let value: serde_json::Value = serde_json::from_str(text).map_err(schema)?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or(FormatError::MissingKey("format_version"))?;
        if version != u64::from(REPORT_VERSION) {
            return Err(FormatError::Version(version.try_into().unwrap_or(u32::MAX)));
        }
        serde_json::from_value(value).map_err(schema)
    }
}

pub fn write_report(path: impl AsRef<Path>, report: &ReportFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_json() + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ReportFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(ReportFile::from_json(&text)?)
}

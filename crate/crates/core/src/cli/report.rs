//! Versioned JSON evaluation reports.

use serde::{Deserialize, Serialize};

use crate::eval::EvalReport;
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_sha256: String,
    pub model_sha256: String,
    pub command_line: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub model_kind: String,
    pub split: String,
    pub excluded_category: Option<String>,
    /// Most frequent ground-truth sequence of the evaluated split.
    pub majority_sequence: String,
    pub report: EvalReport,
    pub provenance: Provenance,
}

impl ReportFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let r: ReportFile = serde_json::from_slice(bytes)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported report schema version {}",
                r.schema_version
            )));
        }
        let e = &r.report;
        if e.relaxed.len() != crate::eval::RELAXED_KS || e.edit_curve.len() != crate::eval::EDIT_DS {
            return Err(Error::Format("report curves have the wrong number of points".into()));
        }
        Ok(r)
    }
}

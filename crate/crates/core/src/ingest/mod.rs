//! Loading differential-diagnosis case releases.
//!
//! Three inputs are understood:
//!
//! * an evidence catalog, one JSON record per evidence (JSON Lines), or the
//!   release's single JSON object keyed by evidence code;
//! * a cases CSV with `AGE, SEX, PATHOLOGY, EVIDENCES, INITIAL_EVIDENCE`
//!   columns, where `EVIDENCES` is a list literal of `CODE` or
//!   `CODE_@_VALUE` entries;
//! * a `pathology<TAB>department` mapping file.

mod cases;
mod catalog;
mod mapping;
mod sampling;

pub use cases::{parse_patient_cases, parse_evidence_list, CaseParse, CaseReader, ParseMode, RowError, RowErrorKind};
pub use catalog::{parse_evidence_catalog, write_evidence_catalog};
pub use mapping::{department_of, parse_department_mapping, DepartmentMapping};
pub use sampling::{largest_remainder, sample_cases, stratified_sample_indices, SamplingSpec, Stratify};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed catalog record at {locator} (code {code:?}): {reason}")]
    MalformedRecord { locator: String, code: Option<String>, reason: String },
    #[error("case row {}: {}", .0.row, .0.kind)]
    InvalidRow(RowError),
    #[error("cases file is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("cannot sample {requested} cases from {available}")]
    InsufficientCases { requested: usize, available: usize },
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("pathologies without a department mapping: {}", .0.join(", "))]
    UnmappedPathologies(Vec<String>),
    #[error("pathology `{0}` has no department mapping")]
    UnmappedPathology(String),
    #[error("mapping line {line}: {reason}")]
    MalformedMapping { line: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

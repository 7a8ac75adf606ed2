use std::fmt;
use std::io::Read;

use serde::Serialize;

use super::IngestError;
use crate::domain::{is_evidence_code, EvidenceCatalog, EvidenceValue, PatientCase, Sex};

/// Separator between an evidence code and its value in the cases file.
pub const VALUE_SEPARATOR: &str = "_@_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Abort on the first bad row.
    #[default]
    Strict,
    /// Skip bad rows and report them.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowErrorKind {
    UnknownEvidenceCode { code: String },
    ValueOutOfDomain { code: String, value: Option<String> },
    InitialEvidenceMissing { code: String },
    BadField { column: &'static str, reason: String },
}

impl fmt::Display for RowErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownEvidenceCode { code } => write!(f, "unknown evidence code {code}"),
            Self::ValueOutOfDomain { code, value } => {
                write!(f, "value {value:?} outside the domain of {code}")
            }
            Self::InitialEvidenceMissing { code } => {
                write!(f, "initial evidence {code} not among the case evidences")
            }
            Self::BadField { column, reason } => write!(f, "column {column}: {reason}"),
        }
    }
}

/// A rejected row. `row` is 1-based and counts data rows (the header is row 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    pub row: usize,
    pub kind: RowErrorKind,
}

#[derive(Debug, Clone, Default)]
pub struct CaseParse {
    pub cases: Vec<PatientCase>,
    pub violations: Vec<RowError>,
}

/// Splits a list literal such as `['E_91', 'E_55_@_V_89']` into entries.
pub fn parse_evidence_list(literal: &str) -> Vec<String> {
    let inner = literal.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(',')
        .map(|s| s.trim().trim_matches(|c| c == '\'' || c == '"').trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn decode_evidence(entry: &str) -> EvidenceValue {
    match entry.split_once(VALUE_SEPARATOR) {
        Some((code, value)) => EvidenceValue { code: code.to_string(), value: Some(value.to_string()) },
        None => EvidenceValue { code: entry.to_string(), value: None },
    }
}

struct Columns {
    age: usize,
    sex: usize,
    pathology: usize,
    evidences: usize,
    initial: usize,
}

impl Columns {
    fn locate(headers: &csv::StringRecord) -> Result<Self, IngestError> {
        let find = |name: &'static str| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or(IngestError::MissingColumn(name))
        };
        Ok(Self {
            age: find("AGE")?,
            sex: find("SEX")?,
            pathology: find("PATHOLOGY")?,
            evidences: find("EVIDENCES")?,
            initial: find("INITIAL_EVIDENCE")?,
        })
    }
}

/// Streaming reader over a cases file. Yields one result per data row.
pub struct CaseReader<'c, R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    columns: Columns,
    catalog: &'c EvidenceCatalog,
    row: usize,
}

impl<'c, R: Read> CaseReader<'c, R> {
    pub fn new(source: R, catalog: &'c EvidenceCatalog) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
        let columns = Columns::locate(reader.headers()?)?;
        Ok(Self { records: reader.into_records(), columns, catalog, row: 0 })
    }

    fn decode(&self, rec: &csv::StringRecord) -> Result<PatientCase, RowErrorKind> {
        let field = |idx: usize, column: &'static str| {
            rec.get(idx).ok_or(RowErrorKind::BadField { column, reason: "missing".into() })
        };
        let age = field(self.columns.age, "AGE")?
            .trim()
            .parse::<u32>()
            .map_err(|e| RowErrorKind::BadField { column: "AGE", reason: e.to_string() })?;
        let sex: Sex = field(self.columns.sex, "SEX")?
            .parse()
            .map_err(|reason| RowErrorKind::BadField { column: "SEX", reason })?;
        let pathology = field(self.columns.pathology, "PATHOLOGY")?.trim().to_string();
        if pathology.is_empty() {
            return Err(RowErrorKind::BadField { column: "PATHOLOGY", reason: "empty".into() });
        }
        let evidences: Vec<EvidenceValue> = parse_evidence_list(field(self.columns.evidences, "EVIDENCES")?)
            .iter()
            .map(|e| decode_evidence(e))
            .collect();
        let initial_evidence = field(self.columns.initial, "INITIAL_EVIDENCE")?.trim().to_string();

        for ev in &evidences {
            if !is_evidence_code(&ev.code) {
                return Err(RowErrorKind::UnknownEvidenceCode { code: ev.code.clone() });
            }
            let spec = self
                .catalog
                .get(&ev.code)
                .ok_or_else(|| RowErrorKind::UnknownEvidenceCode { code: ev.code.clone() })?;
            if !spec.accepts(ev.value.as_deref()) {
                return Err(RowErrorKind::ValueOutOfDomain { code: ev.code.clone(), value: ev.value.clone() });
            }
        }
        if !evidences.iter().any(|e| e.code == initial_evidence) {
            return Err(RowErrorKind::InitialEvidenceMissing { code: initial_evidence });
        }
        Ok(PatientCase { age, sex, pathology, evidences, initial_evidence })
    }
}

impl<R: Read> Iterator for CaseReader<'_, R> {
    type Item = Result<PatientCase, RowError>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.records.next()?;
        self.row += 1;
        let row = self.row;
        Some(match rec {
            Ok(rec) => self.decode(&rec).map_err(|kind| RowError { row, kind }),
            Err(e) => Err(RowError { row, kind: RowErrorKind::BadField { column: "*", reason: e.to_string() } }),
        })
    }
}

/// Parses every row of a cases file against `catalog`.
pub fn parse_patient_cases<R: Read>(
    source: R,
    catalog: &EvidenceCatalog,
    mode: ParseMode,
) -> Result<CaseParse, IngestError> {
    let mut out = CaseParse::default();
    for item in CaseReader::new(source, catalog)? {
        match item {
            Ok(case) => out.cases.push(case),
            Err(err) if mode == ParseMode::Strict => return Err(IngestError::InvalidRow(err)),
            Err(err) => out.violations.push(err),
        }
    }
    Ok(out)
}

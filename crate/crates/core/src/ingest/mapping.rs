use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read};

use super::IngestError;
use crate::domain::{Department, DepartmentSet, PatientCase};

/// Pathology → department lookup. Keys match case-insensitively.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DepartmentMapping {
    entries: BTreeMap<String, Department>,
}

impl DepartmentMapping {
    pub fn insert(&mut self, pathology: &str, dept: Department) {
        self.entries.insert(pathology.trim().to_lowercase(), dept);
    }

    pub fn get(&self, pathology: &str) -> Option<&Department> {
        self.entries.get(&pathology.trim().to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn departments(&self) -> DepartmentSet {
        DepartmentSet::new(self.entries.values().cloned())
    }

    /// Fails with every pathology in `cases` that has no mapping.
    pub fn check_total<'a, I>(&self, cases: I) -> Result<(), IngestError>
    where
        I: IntoIterator<Item = &'a PatientCase>,
    {
        let missing: BTreeSet<String> = cases
            .into_iter()
            .filter(|c| self.get(&c.pathology).is_none())
            .map(|c| c.pathology.clone())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(IngestError::UnmappedPathologies(missing.into_iter().collect()))
        }
    }
}

/// Reads `pathology<TAB>department` lines; blank lines and `#` comments are skipped.
pub fn parse_department_mapping<R: Read>(source: R) -> Result<DepartmentMapping, IngestError> {
    let mut mapping = DepartmentMapping::default();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (pathology, dept) = line.split_once('\t').ok_or_else(|| IngestError::MalformedMapping {
            line: i + 1,
            reason: "expected pathology<TAB>department".into(),
        })?;
        if pathology.trim().is_empty() || dept.trim().is_empty() {
            return Err(IngestError::MalformedMapping { line: i + 1, reason: "empty field".into() });
        }
        mapping.insert(pathology, Department::new(dept));
    }
    Ok(mapping)
}

pub fn department_of(case: &PatientCase, mapping: &DepartmentMapping) -> Result<Department, IngestError> {
    mapping
        .get(&case.pathology)
        .cloned()
        .ok_or_else(|| IngestError::UnmappedPathology(case.pathology.clone()))
}

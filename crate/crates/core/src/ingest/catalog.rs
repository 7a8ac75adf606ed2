use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::IngestError;
use crate::domain::{is_evidence_code, EvidenceCatalog, EvidenceDataType, EvidenceSpec};

#[derive(Debug, Deserialize)]
struct RawRecord {
    #[serde(alias = "name")]
    code: Option<String>,
    #[serde(alias = "question")]
    question_en: Option<String>,
    data_type: Option<String>,
    #[serde(rename = "possible-values", alias = "possible_values", default)]
    possible_values: Vec<Value>,
    #[serde(default)]
    default_value: Option<Value>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    code: &'a str,
    question_en: &'a str,
    data_type: EvidenceDataType,
    #[serde(rename = "possible-values")]
    possible_values: &'a [String],
    default_value: &'a Option<String>,
}

fn scalar_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn build_spec(raw: RawRecord, locator: String, key: Option<&str>) -> Result<(String, EvidenceSpec), IngestError> {
    let code = raw.code.or_else(|| key.map(str::to_string));
    let malformed = |reason: &str| IngestError::MalformedRecord {
        locator: locator.clone(),
        code: code.clone(),
        reason: reason.to_string(),
    };
    let Some(code_str) = code.clone() else {
        return Err(malformed("missing code"));
    };
    if !is_evidence_code(&code_str) {
        return Err(malformed("code does not match E_<digits>"));
    }
    let question = raw
        .question_en
        .filter(|q| !q.trim().is_empty())
        .ok_or_else(|| malformed("missing question text"))?;
    let data_type: EvidenceDataType = raw
        .data_type
        .as_deref()
        .ok_or_else(|| malformed("missing data_type"))?
        .parse()
        .map_err(|e: String| malformed(&e))?;
    let possible_values = raw
        .possible_values
        .iter()
        .map(|v| scalar_to_string(v).ok_or_else(|| malformed("non-scalar possible value")))
        .collect::<Result<Vec<_>, _>>()?;
    let possible_values = if data_type == EvidenceDataType::Binary { Vec::new() } else { possible_values };
    if data_type != EvidenceDataType::Binary && possible_values.len() < 2 {
        return Err(malformed("categorical and multi-choice evidences need at least 2 possible values"));
    }
    let default_value = raw.default_value.as_ref().and_then(scalar_to_string);
    Ok((
        code_str,
        EvidenceSpec { question_text: question, data_type, possible_values, default_value },
    ))
}

/// Parses an evidence catalog. Unknown fields are ignored.
pub fn parse_evidence_catalog<R: Read>(mut source: R) -> Result<EvidenceCatalog, IngestError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut catalog = EvidenceCatalog::default();

    // Release layout: a single object keyed by code.
    if let Ok(map) = serde_json::from_str::<BTreeMap<String, RawRecord>>(&text) {
        for (key, raw) in map {
            let (code, spec) = build_spec(raw, format!("record `{key}`"), Some(&key))?;
            catalog.entries.insert(code, spec);
        }
        return Ok(catalog);
    }

    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let locator = format!("line {}", i + 1);
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| IngestError::MalformedRecord {
            locator: locator.clone(),
            code: None,
            reason: e.to_string(),
        })?;
        let (code, spec) = build_spec(raw, locator, None)?;
        catalog.entries.insert(code, spec);
    }
    Ok(catalog)
}

/// Writes the catalog as JSON Lines, readable by [`parse_evidence_catalog`].
pub fn write_evidence_catalog<W: Write>(catalog: &EvidenceCatalog, mut out: W) -> Result<(), IngestError> {
    for (code, spec) in &catalog.entries {
        let rec = OutRecord {
            code,
            question_en: &spec.question_text,
            data_type: spec.data_type,
            possible_values: &spec.possible_values,
            default_value: &spec.default_value,
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

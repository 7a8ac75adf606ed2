use std::collections::BTreeMap;
use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SynthesisError;

/// The five affirmative replies every bank must offer.
pub const CANONICAL_AFFIRMATIONS: [&str; 5] = ["I think so", "Absolutely", "Of course", "Definitely", "For sure"];

pub const VARIANTS_PER_QUESTION: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityBucket {
    pub min: u8,
    pub max: u8,
    pub label: String,
    pub phrases: Vec<String>,
}

/// Lay-language material for artificial dialogue rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantBank {
    /// Evidence code → exactly four rephrasings of its question.
    pub variants: BTreeMap<String, Vec<String>>,
    /// Numeric severity buckets; together they cover 1..=10.
    pub severity: Vec<SeverityBucket>,
    pub affirmations: Vec<String>,
    /// Clinical answer value → lay phrasings (e.g. `iliac wing(R)`).
    #[serde(default)]
    pub term_rewrites: BTreeMap<String, Vec<String>>,
}

fn non_empty_all(items: &[String]) -> bool {
    !items.is_empty() && items.iter().all(|s| !s.trim().is_empty())
}

impl VariantBank {
    pub fn from_reader<R: Read>(source: R) -> Result<Self, SynthesisError> {
        let bank: VariantBank =
            serde_json::from_reader(source).map_err(|e| SynthesisError::InvalidBank(e.to_string()))?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        let invalid = |m: String| Err(SynthesisError::InvalidBank(m));
        for (code, vs) in &self.variants {
            if vs.len() != VARIANTS_PER_QUESTION || !non_empty_all(vs) {
                return invalid(format!("{code} needs exactly {VARIANTS_PER_QUESTION} non-empty variants"));
            }
        }
        for phrases in self.term_rewrites.values() {
            if !non_empty_all(phrases) {
                return invalid("term rewrites must be non-empty".into());
            }
        }
        for canon in CANONICAL_AFFIRMATIONS {
            if !self.affirmations.iter().any(|a| a == canon) {
                return invalid(format!("affirmations must include \"{canon}\""));
            }
        }
        if !non_empty_all(&self.affirmations) {
            return invalid("affirmations must be non-empty".into());
        }
        let mut buckets: Vec<&SeverityBucket> = self.severity.iter().collect();
        buckets.sort_by_key(|b| b.min);
        let mut next = 1u8;
        for b in &buckets {
            if b.min != next || b.max < b.min || !non_empty_all(&b.phrases) {
                return invalid(format!("severity bucket {}..={} leaves a gap or overlap", b.min, b.max));
            }
            next = b.max + 1;
        }
        if next != 11 {
            return invalid("severity buckets must cover 1..=10".into());
        }
        Ok(())
    }

    pub fn question_variants(&self, code: &str) -> Result<&[String], SynthesisError> {
        self.variants
            .get(code)
            .map(Vec::as_slice)
            .ok_or_else(|| SynthesisError::MissingVariant(code.to_string()))
    }

    pub fn severity_bucket(&self, value: u8) -> Option<&SeverityBucket> {
        self.severity.iter().find(|b| (b.min..=b.max).contains(&value))
    }

    pub(crate) fn pick<'a, R: Rng>(rng: &mut R, items: &'a [String]) -> &'a str {
        &items[rng.random_range(0..items.len())]
    }

    /// Every piece of text the bank can emit.
    pub fn all_phrases(&self) -> impl Iterator<Item = &str> {
        self.variants
            .values()
            .flatten()
            .chain(self.severity.iter().flat_map(|b| b.phrases.iter()))
            .chain(self.affirmations.iter())
            .chain(self.term_rewrites.values().flatten())
            .map(String::as_str)
    }
}

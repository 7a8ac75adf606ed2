use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bank::VariantBank;
use super::{recommendation_text, SynthesisError};
use crate::domain::{
    Conversation, ConversationSource, EvidenceCatalog, EvidenceDataType, EvidenceSpec, PatientCase, SpeakerRole,
};
use crate::ingest::{department_of, DepartmentMapping};

/// Stable identifier derived from the case contents (FNV-1a).
pub fn case_id(case: &PatientCase) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let bytes = serde_json::to_vec(case).expect("case serializes");
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("case-{h:016x}")
}

/// Mixes a corpus seed with an item index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d4_9bb1_3311_16eb);
    z ^ (z >> 31)
}

/// Joins items as `a`, `a and b`, `a, b and c`.
fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

struct Exchange<'a> {
    code: &'a str,
    spec: &'a EvidenceSpec,
    values: Vec<&'a str>,
}

fn exchanges<'a>(
    case: &'a PatientCase,
    catalog: &'a EvidenceCatalog,
    max_turns: usize,
) -> Result<Vec<Exchange<'a>>, SynthesisError> {
    let limit = max_turns.saturating_sub(1) / 2;
    case.grouped_evidences()
        .into_iter()
        .take(limit)
        .map(|(code, values)| {
            let spec = catalog
                .get(code)
                .ok_or_else(|| SynthesisError::UnknownEvidenceCode(code.to_string()))?;
            Ok(Exchange { code, spec, values })
        })
        .collect()
}

fn raw_answer(ex: &Exchange<'_>) -> String {
    match ex.spec.data_type {
        EvidenceDataType::Binary => "Yes".to_string(),
        _ => join_list(&ex.values.iter().map(|v| v.to_string()).collect::<Vec<_>>()),
    }
}

/// Catalog questions verbatim, answers as `Yes` or the literal values, closed
/// by the recommendation turn.
pub fn render_raw_conversation(
    case: &PatientCase,
    catalog: &EvidenceCatalog,
    mapping: &DepartmentMapping,
) -> Result<Conversation, SynthesisError> {
    render_raw_with_limit(case, catalog, mapping, usize::MAX)
}

pub(crate) fn render_raw_with_limit(
    case: &PatientCase,
    catalog: &EvidenceCatalog,
    mapping: &DepartmentMapping,
    max_turns: usize,
) -> Result<Conversation, SynthesisError> {
    let dept = department_of(case, mapping)?;
    let mut pairs: Vec<(SpeakerRole, String)> = Vec::new();
    for ex in exchanges(case, catalog, max_turns)? {
        pairs.push((SpeakerRole::Assistant, ex.spec.question_text.clone()));
        pairs.push((SpeakerRole::Patient, raw_answer(&ex)));
    }
    pairs.push((SpeakerRole::Assistant, recommendation_text(&dept)));
    Ok(Conversation::from_pairs(case_id(case), ConversationSource::Raw, pairs).with_department(dept))
}

fn artificial_answer(ex: &Exchange<'_>, bank: &VariantBank, rng: &mut ChaCha8Rng) -> String {
    if ex.spec.data_type == EvidenceDataType::Binary {
        return VariantBank::pick(rng, &bank.affirmations).to_string();
    }
    if ex.spec.is_numeric_scale() {
        let phrases: Vec<String> = ex
            .values
            .iter()
            .map(|v| {
                v.parse::<u8>()
                    .ok()
                    .and_then(|n| bank.severity_bucket(n))
                    .map(|b| VariantBank::pick(rng, &b.phrases).to_string())
                    .unwrap_or_else(|| v.to_string())
            })
            .collect();
        return join_list(&phrases);
    }
    let phrases: Vec<String> = ex
        .values
        .iter()
        .map(|v| match bank.term_rewrites.get(*v) {
            Some(lay) => VariantBank::pick(rng, lay).to_string(),
            None => v.to_string(),
        })
        .collect();
    join_list(&phrases)
}

/// Same exchanges as the raw rendering, worded from the variant bank.
pub fn render_artificial_conversation(
    case: &PatientCase,
    catalog: &EvidenceCatalog,
    bank: &VariantBank,
    mapping: &DepartmentMapping,
    seed: u64,
) -> Result<Conversation, SynthesisError> {
    render_artificial_with_limit(case, catalog, bank, mapping, seed, usize::MAX)
}

pub(crate) fn render_artificial_with_limit(
    case: &PatientCase,
    catalog: &EvidenceCatalog,
    bank: &VariantBank,
    mapping: &DepartmentMapping,
    seed: u64,
    max_turns: usize,
) -> Result<Conversation, SynthesisError> {
    let dept = department_of(case, mapping)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(SpeakerRole, String)> = Vec::new();
    for ex in exchanges(case, catalog, max_turns)? {
        let variants = bank.question_variants(ex.code)?;
        pairs.push((SpeakerRole::Assistant, VariantBank::pick(&mut rng, variants).to_string()));
        pairs.push((SpeakerRole::Patient, artificial_answer(&ex, bank, &mut rng)));
    }
    pairs.push((SpeakerRole::Assistant, recommendation_text(&dept)));
    Ok(Conversation::from_pairs(case_id(case), ConversationSource::Artificial, pairs).with_department(dept))
}

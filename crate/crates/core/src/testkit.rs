//! Bundled reference data and seeded synthetic corpora for tests, benches
//! and demos.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{
    Conversation, ConversationSource, Department, EvidenceCatalog, EvidenceDataType, EvidenceValue, PatientCase, Sex,
    SpeakerRole,
};
use crate::ingest::{largest_remainder, parse_department_mapping, parse_evidence_catalog, DepartmentMapping};
use crate::synthesis::{recommendation_text, VariantBank};

pub const EVIDENCES_JSONL: &str = include_str!("../data/evidences.jsonl");
pub const DEPARTMENTS_TSV: &str = include_str!("../data/departments.tsv");
pub const VARIANT_BANK_JSON: &str = include_str!("../data/variant_bank.json");

pub fn bundled_catalog() -> EvidenceCatalog {
    parse_evidence_catalog(EVIDENCES_JSONL.as_bytes()).expect("bundled catalog parses")
}

pub fn bundled_mapping() -> DepartmentMapping {
    parse_department_mapping(DEPARTMENTS_TSV.as_bytes()).expect("bundled mapping parses")
}

pub fn bundled_bank() -> VariantBank {
    VariantBank::from_reader(VARIANT_BANK_JSON.as_bytes()).expect("bundled bank parses")
}

/// Pathology names from the bundled mapping, in file order.
pub fn bundled_pathologies() -> Vec<String> {
    DEPARTMENTS_TSV
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('\t').map(|(p, _)| p.to_string()))
        .collect()
}

fn random_case(rng: &mut ChaCha8Rng, catalog: &EvidenceCatalog, pathology: &str, max_evidences: usize) -> PatientCase {
    let codes: Vec<&String> = catalog.entries.keys().collect();
    let k = rng.random_range(1..=max_evidences.clamp(1, codes.len()));
    let chosen: Vec<&String> = codes.choose_multiple(rng, k).copied().collect();
    let mut evidences = Vec::new();
    for code in &chosen {
        let spec = &catalog.entries[*code];
        match spec.data_type {
            EvidenceDataType::Binary => evidences.push(EvidenceValue { code: code.to_string(), value: None }),
            EvidenceDataType::Categorical => {
                let v = spec.possible_values.choose(rng).expect("categorical has values");
                evidences.push(EvidenceValue { code: code.to_string(), value: Some(v.clone()) });
            }
            EvidenceDataType::MultiChoice => {
                let n = rng.random_range(1..=2.min(spec.possible_values.len()));
                for v in spec.possible_values.choose_multiple(rng, n) {
                    evidences.push(EvidenceValue { code: code.to_string(), value: Some(v.clone()) });
                }
            }
        }
    }
    PatientCase {
        age: rng.random_range(1..95),
        sex: if rng.random_bool(0.5) { Sex::F } else { Sex::M },
        pathology: pathology.to_string(),
        initial_evidence: chosen[0].to_string(),
        evidences,
    }
}

/// `n` valid cases whose pathology counts follow `weights` exactly (largest
/// remainder), shuffled under `seed`.
pub fn synthetic_cases(n: usize, seed: u64, weights: &[(&str, f64)], catalog: &EvidenceCatalog) -> Vec<PatientCase> {
    let scaled: Vec<usize> = weights.iter().map(|(_, w)| (w * 1_000_000.0).round() as usize).collect();
    let counts = largest_remainder(&scaled, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(n);
    for ((name, _), &count) in weights.iter().zip(&counts) {
        for _ in 0..count {
            cases.push(random_case(&mut rng, catalog, name, 8));
        }
    }
    cases.shuffle(&mut rng);
    cases
}

/// `n` bundled-catalog cases spread uniformly over the bundled pathologies.
pub fn bundled_cases(n: usize, seed: u64) -> Vec<PatientCase> {
    let names = bundled_pathologies();
    let weights: Vec<(&str, f64)> = names.iter().map(|p| (p.as_str(), 1.0)).collect();
    synthetic_cases(n, seed, &weights, &bundled_catalog())
}

const SEPARABLE: [(&str, [&str; 6]); 3] = [
    ("cardiology", ["palpitations", "chest", "racing", "heartbeat", "fluttering", "pressure"]),
    ("dermatology", ["rash", "itchy", "spots", "blisters", "redness", "flaky"]),
    ("neurology", ["numbness", "tingling", "headache", "dizziness", "vision", "weakness"]),
];

const FILLER: [&str; 8] = ["really", "lately", "since", "yesterday", "quite", "often", "my", "feel"];

/// Three departments with disjoint symptom vocabularies, `per_department`
/// conversations each. Every conversation closes with the recommendation turn.
pub fn separable_corpus(per_department: usize, seed: u64) -> Vec<Conversation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (dept, words) in SEPARABLE {
        let dept = Department::new(dept);
        for _ in 0..per_department {
            let answer = |rng: &mut ChaCha8Rng| {
                let mut picked: Vec<&str> = words.choose_multiple(rng, 2).copied().collect();
                picked.extend(FILLER.choose_multiple(rng, 2));
                picked.shuffle(rng);
                picked.join(" ")
            };
            let a1 = answer(&mut rng);
            let a2 = answer(&mut rng);
            let conv = Conversation::from_pairs(
                format!("s{:05}", out.len() + 1),
                ConversationSource::Artificial,
                [
                    (SpeakerRole::Assistant, "What brings you in today?".to_string()),
                    (SpeakerRole::Patient, a1),
                    (SpeakerRole::Assistant, "Can you tell me more about it?".to_string()),
                    (SpeakerRole::Patient, a2),
                    (SpeakerRole::Assistant, recommendation_text(&dept)),
                ],
            )
            .with_department(dept.clone());
            out.push(conv);
        }
    }
    out.shuffle(&mut rng);
    out
}

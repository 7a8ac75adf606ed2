//! Case-to-dialogue synthesis, training-sample formatting and EHR summaries.

mod bank;
mod config;
mod format;
mod render;
mod rewrite;
mod summary;

use std::io::{BufRead, Write};

use thiserror::Error;

pub use bank::{SeverityBucket, VariantBank, CANONICAL_AFFIRMATIONS, VARIANTS_PER_QUESTION};
pub use config::{emit_training_config, RewriteMode, SynthesisConfig, TrainingConfig, TrainingOverrides, DEFAULT_MARKER};
pub use format::{format_training_samples, render_context_turn};
pub use render::{case_id, derive_seed, render_artificial_conversation, render_raw_conversation};
pub use rewrite::{parse_tagged_transcript, rewrite_conversation_llm, RewriteOutcome};
pub use summary::generate_summary;

use crate::backend::{BackendError, ChatBackend};
use crate::domain::{Conversation, ConversationSource, Department, EvidenceCatalog, PatientCase, TrainingSample, Violation};
use crate::ingest::{DepartmentMapping, IngestError};
use crate::par::Execution;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("evidence code `{0}` is not in the catalog")]
    UnknownEvidenceCode(String),
    #[error("variant bank has no entry for `{0}`")]
    MissingVariant(String),
    #[error("conversation {conversation} turn {turn} contains the end-of-turn marker")]
    MarkerCollision { conversation: String, turn: usize },
    #[error("conversation {0} has no department recommendation")]
    MissingRecommendation(String),
    #[error("invalid conversation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConversation(Vec<Violation>),
    #[error("invalid hyperparameter `{0}`")]
    InvalidHyperparameter(&'static str),
    #[error("invalid variant bank: {0}")]
    InvalidBank(String),
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("{source_kind} synthesis needs {what}")]
    MissingInput { source_kind: &'static str, what: &'static str },
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const RECOMMENDATION_TEMPLATE: &str = "Based on your symptoms, I recommend visiting the {department} department.";

pub fn recommendation_text(dept: &Department) -> String {
    RECOMMENDATION_TEMPLATE.replace("{department}", dept.name())
}

/// Inputs shared by every corpus item.
pub struct CorpusInputs<'a> {
    pub catalog: &'a EvidenceCatalog,
    pub mapping: &'a DepartmentMapping,
    pub bank: Option<&'a VariantBank>,
    pub backend: Option<&'a dyn ChatBackend>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub conversations: Vec<Conversation>,
    /// Rewritten turns that fell back to their source turn.
    pub rewrite_fallbacks: usize,
}

/// Renders one dataset. Ids are positional (`c00001`, ...) so the three
/// datasets built from one case list line up. LLM rewriting starts from the
/// raw rendering.
pub fn synthesize_corpus(
    cases: &[PatientCase],
    inputs: &CorpusInputs<'_>,
    source: ConversationSource,
    cfg: &SynthesisConfig,
    exec: Execution,
) -> Result<Corpus, SynthesisError> {
    cfg.validate()?;
    let bank_needed = || SynthesisError::MissingInput { source_kind: "artificial", what: "a variant bank" };
    let backend_needed = || SynthesisError::MissingInput { source_kind: "rewritten", what: "a backend" };
    match source {
        ConversationSource::Artificial if inputs.bank.is_none() => return Err(bank_needed()),
        ConversationSource::LlmRewritten if inputs.backend.is_none() => return Err(backend_needed()),
        ConversationSource::Live => {
            return Err(SynthesisError::InvalidConfig("live conversations are not synthesized".into()))
        }
        _ => {}
    }

    let items: Vec<(usize, &PatientCase)> = cases.iter().enumerate().collect();
    let rendered = exec.try_map(&items, |&(i, case)| -> Result<(Conversation, usize), SynthesisError> {
        let mut conv = match source {
            ConversationSource::Artificial => render::render_artificial_with_limit(
                case,
                inputs.catalog,
                inputs.bank.ok_or_else(bank_needed)?,
                inputs.mapping,
                derive_seed(cfg.seed, i as u64),
                cfg.max_turns,
            )?,
            _ => render::render_raw_with_limit(case, inputs.catalog, inputs.mapping, cfg.max_turns)?,
        };
        conv.id = format!("c{:05}", i + 1);
        let mut fallbacks = 0;
        if source == ConversationSource::LlmRewritten {
            let out = rewrite_conversation_llm(&conv, inputs.backend.ok_or_else(backend_needed)?, cfg)?;
            fallbacks = out.fallbacks;
            conv = out.conversation;
        }
        check_marker(&conv, &cfg.marker)?;
        Ok((conv, fallbacks))
    })?;

    let rewrite_fallbacks = rendered.iter().map(|(_, f)| f).sum();
    Ok(Corpus { conversations: rendered.into_iter().map(|(c, _)| c).collect(), rewrite_fallbacks })
}

fn check_marker(conv: &Conversation, marker: &str) -> Result<(), SynthesisError> {
    match conv.turns.iter().find(|t| t.text.contains(marker)) {
        Some(t) => Err(SynthesisError::MarkerCollision { conversation: conv.id.clone(), turn: t.index }),
        None => Ok(()),
    }
}

/// Writes one JSON record per line.
pub fn write_jsonl<T: serde::Serialize, W: Write>(mut out: W, records: &[T]) -> Result<(), SynthesisError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_conversations<W: Write>(out: W, convs: &[Conversation]) -> Result<(), SynthesisError> {
    write_jsonl(out, convs)
}

pub fn write_training_samples<W: Write>(out: W, samples: &[TrainingSample]) -> Result<(), SynthesisError> {
    write_jsonl(out, samples)
}

/// Reads conversation records, skipping blank lines. Turn indices are
/// renumbered from the record order.
pub fn read_conversations<R: BufRead>(source: R) -> Result<Vec<Conversation>, SynthesisError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut conv: Conversation = serde_json::from_str(&line)
            .map_err(|e| SynthesisError::MalformedRecord { line: i + 1, reason: e.to_string() })?;
        conv.reindex();
        out.push(conv);
    }
    Ok(out)
}

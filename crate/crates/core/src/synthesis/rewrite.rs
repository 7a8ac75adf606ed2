use super::config::{RewriteMode, SynthesisConfig};
use super::SynthesisError;
use crate::backend::{ChatBackend, ChatMessage, ChatOptions};
use crate::domain::{validate_conversation, Conversation, ConversationSource, DepartmentSet, DialogueTurn, SpeakerRole};
use crate::domain::strip_role_tag;
use crate::engine::extract_department;

const WHOLE_INSTRUCTION: &str = "Rewrite the following doctor-patient conversation in warm, everyday language that a \
patient without medical training understands. Avoid medical jargon. Keep exactly one line per turn, start every line \
with its original speaker tag ([Assistant] or [Patient]), keep the same number of lines in the same order, and keep \
the department named in the last line.";

const TURN_INSTRUCTION: &str = "Rewrite the following utterance from a patient triage conversation in warm, everyday \
language without medical jargon. Keep its meaning, and keep any department name unchanged. Reply with the rewritten \
utterance only.";

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteOutcome {
    pub conversation: Conversation,
    /// Turns kept from the input because the rewrite was unusable.
    pub fallbacks: usize,
}

/// Splits a tagged transcript into turns. Untagged lines continue the previous turn.
pub fn parse_tagged_transcript(text: &str) -> Vec<(SpeakerRole, String)> {
    let mut out: Vec<(SpeakerRole, String)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tagged = line
            .strip_prefix('[')
            .and_then(|rest| rest.split_once(']'))
            .and_then(|(tag, body)| SpeakerRole::from_tag(&format!("[{tag}]")).map(|r| (r, body.trim())));
        match tagged {
            Some((role, body)) => out.push((role, body.to_string())),
            None => {
                if let Some(last) = out.last_mut() {
                    if !last.1.is_empty() {
                        last.1.push(' ');
                    }
                    last.1.push_str(line);
                }
            }
        }
    }
    out
}

fn usable(original: &DialogueTurn, candidate: Option<(SpeakerRole, &str)>, cfg: &SynthesisConfig, must_name: Option<&DepartmentSet>) -> Option<String> {
    let (role, text) = candidate?;
    let text = text.trim();
    if role != original.role || text.is_empty() || text.contains(&cfg.marker) {
        return None;
    }
    if let Some(depts) = must_name {
        extract_department(text, depts)?;
    }
    Some(text.to_string())
}

/// Rewrites every turn through `backend`, keeping the structure. A rewritten
/// turn that changes role, comes back empty, contains the end-of-turn marker,
/// or (for the recommendation turn) loses the department is replaced by the
/// input turn and counted.
pub fn rewrite_conversation_llm(
    conv: &Conversation,
    backend: &dyn ChatBackend,
    cfg: &SynthesisConfig,
) -> Result<RewriteOutcome, SynthesisError> {
    let violations = validate_conversation(conv);
    if !violations.is_empty() {
        return Err(SynthesisError::InvalidConversation(violations));
    }
    let opts = ChatOptions { temperature: Some(cfg.rewrite_temperature) };
    let dept_set = conv.department.clone().map(|d| DepartmentSet::new([d]));
    let last = conv.turns.len() - 1;
    let must_name = |i: usize| if i == last { dept_set.as_ref() } else { None };

    let rewritten: Vec<Option<String>> = match cfg.rewrite_mode {
        RewriteMode::WholeConversation => {
            let transcript = conv.turns.iter().map(DialogueTurn::render_tagged).collect::<Vec<_>>().join("\n");
            let reply = backend.chat(&[ChatMessage::system(WHOLE_INSTRUCTION), ChatMessage::user(transcript)], &opts)?;
            let parsed = parse_tagged_transcript(&reply);
            conv.turns
                .iter()
                .enumerate()
                .map(|(i, t)| usable(t, parsed.get(i).map(|(r, s)| (*r, s.as_str())), cfg, must_name(i)))
                .collect()
        }
        RewriteMode::TurnByTurn => {
            let mut out = Vec::with_capacity(conv.turns.len());
            for (i, t) in conv.turns.iter().enumerate() {
                let reply = backend.chat(&[ChatMessage::system(TURN_INSTRUCTION), ChatMessage::user(t.text.clone())], &opts)?;
                out.push(usable(t, Some((t.role, strip_role_tag(&reply))), cfg, must_name(i)));
            }
            out
        }
    };

    let mut fallbacks = 0;
    let turns = conv
        .turns
        .iter()
        .zip(rewritten)
        .map(|(orig, new)| match new {
            Some(text) => DialogueTurn::new(orig.role, text, orig.index),
            None => {
                fallbacks += 1;
                orig.clone()
            }
        })
        .collect();
    if fallbacks > 0 {
        tracing::debug!(id = %conv.id, fallbacks, "rewrite kept original turns");
    }
    Ok(RewriteOutcome {
        conversation: Conversation {
            id: conv.id.clone(),
            source: ConversationSource::LlmRewritten,
            department: conv.department.clone(),
            turns,
        },
        fallbacks,
    })
}

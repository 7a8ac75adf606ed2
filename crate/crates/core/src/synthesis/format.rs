use super::{SynthesisConfig, SynthesisError};
use crate::domain::{validate_conversation, Conversation, DialogueTurn, SpeakerRole, TrainingSample};

/// `<RoleTag> <text> <marker>`
pub fn render_context_turn(turn: &DialogueTurn, marker: &str) -> String {
    format!("{} {} {}", turn.role.canonical_tag(), turn.text, marker)
}

/// Decomposes a conversation into one sample per assistant turn. Each
/// sample's context holds every earlier turn, marker-terminated and
/// newline-separated; the target is the assistant turn's bare text.
pub fn format_training_samples(conv: &Conversation, cfg: &SynthesisConfig) -> Result<Vec<TrainingSample>, SynthesisError> {
    let marker = cfg.marker.as_str();
    let violations = validate_conversation(conv);
    if !violations.is_empty() {
        return Err(SynthesisError::InvalidConversation(violations));
    }
    if let Some(turn) = conv.turns.iter().find(|t| t.text.contains(marker)) {
        return Err(SynthesisError::MarkerCollision { conversation: conv.id.clone(), turn: turn.index });
    }
    let mut context = String::new();
    let mut samples = Vec::new();
    for turn in &conv.turns {
        if turn.role == SpeakerRole::Assistant {
            samples.push(TrainingSample { context: context.clone(), target: turn.text.clone() });
        }
        if !context.is_empty() {
            context.push('\n');
        }
        context.push_str(&render_context_turn(turn, marker));
    }
    Ok(samples)
}

use super::SynthesisError;
use crate::backend::{ChatBackend, ChatMessage, ChatOptions};
use crate::domain::{Conversation, EhrSummary, SpeakerRole};

const SUMMARY_INSTRUCTION: &str = "Summarize the following triage conversation as a short electronic health record. \
Use exactly these headings, each on its own line: \"Chief complaint:\" followed by one sentence, \"Symptoms:\" \
followed by one line per symptom starting with \"- \", and \"History:\" followed by relevant history or \"None \
reported\". Do not add a diagnosis or treatment.";

#[derive(Default)]
struct Sections {
    chief: String,
    symptoms: Vec<String>,
    history: String,
}

fn heading<'a>(line: &'a str, name: &str) -> Option<&'a str> {
    let (head, rest) = line.split_once(':')?;
    head.trim().eq_ignore_ascii_case(name).then(|| rest.trim())
}

fn parse_sections(reply: &str) -> Sections {
    #[derive(PartialEq)]
    enum At {
        None,
        Chief,
        Symptoms,
        History,
    }
    let mut s = Sections::default();
    let mut at = At::None;
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(rest) = heading(line, "chief complaint") {
            at = At::Chief;
            s.chief = rest.to_string();
        } else if let Some(rest) = heading(line, "symptoms") {
            at = At::Symptoms;
            if !rest.is_empty() {
                s.symptoms.push(rest.to_string());
            }
        } else if let Some(rest) = heading(line, "history") {
            at = At::History;
            s.history = rest.to_string();
        } else {
            let bullet = line.trim_start_matches(['-', '*', '•']).trim();
            match at {
                At::Symptoms if !bullet.is_empty() => s.symptoms.push(bullet.to_string()),
                At::Chief if s.chief.is_empty() => s.chief = line.to_string(),
                At::History => {
                    if !s.history.is_empty() {
                        s.history.push(' ');
                    }
                    s.history.push_str(line);
                }
                _ => {}
            }
        }
    }
    s
}

/// Summarizes a finished conversation. Headings missing from the reply are
/// filled from the transcript itself; `free_text` is always the reply.
pub fn generate_summary(conv: &Conversation, backend: &dyn ChatBackend) -> Result<EhrSummary, SynthesisError> {
    let department = conv
        .department
        .clone()
        .ok_or_else(|| SynthesisError::MissingRecommendation(conv.id.clone()))?;
    let transcript = conv
        .turns
        .iter()
        .map(|t| t.render_tagged())
        .collect::<Vec<_>>()
        .join("\n");
    let reply = backend.chat(
        &[ChatMessage::system(SUMMARY_INSTRUCTION), ChatMessage::user(transcript)],
        &ChatOptions { temperature: Some(0.0) },
    )?;
    let mut sections = parse_sections(&reply);

    if sections.chief.is_empty() {
        sections.chief = conv
            .turns
            .iter()
            .find(|t| t.role == SpeakerRole::Patient)
            .map(|t| t.text.clone())
            .unwrap_or_default();
    }
    if sections.symptoms.is_empty() {
        sections.symptoms = conv
            .turns
            .windows(2)
            .filter(|w| w[0].role == SpeakerRole::Assistant && w[1].role == SpeakerRole::Patient)
            .map(|w| format!("{} {}", w[0].text, w[1].text))
            .collect();
    }
    Ok(EhrSummary {
        chief_complaint: sections.chief,
        symptoms: sections.symptoms,
        history_notes: sections.history,
        recommended_department: department,
        free_text: reply.trim().to_string(),
    })
}

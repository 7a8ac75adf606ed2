use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::extract::detect_recommendation;
use super::EngineError;
use crate::backend::{ChatBackend, ChatOptions};
use crate::domain::{
    strip_role_tag, Conversation, ConversationSource, Department, DepartmentSet, DialogueTurn, EhrSummary, SpeakerRole,
};
use crate::history::{HistoryManager, TokenBudget};
use crate::synthesis::generate_summary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionPhase {
    Greeting,
    Gathering,
    Recommended,
    Summarized,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageRecommendation {
    pub department: Department,
    pub rationale: String,
    pub turn_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageSession {
    pub id: String,
    pub phase: SessionPhase,
    pub history: Vec<DialogueTurn>,
    pub budget: TokenBudget,
    pub recommendation: Option<TriageRecommendation>,
    pub summary: Option<EhrSummary>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    /// The last patient turn has no reply yet because the backend failed.
    #[serde(default)]
    pub pending_reply: bool,
}

impl TriageSession {
    /// The stored history as a conversation record.
    pub fn conversation(&self) -> Conversation {
        Conversation {
            id: self.id.clone(),
            source: ConversationSource::Live,
            department: self.recommendation.as_ref().map(|r| r.department.clone()),
            turns: self.history.clone(),
        }
    }

    fn push(&mut self, role: SpeakerRole, text: String) {
        let index = self.history.len();
        self.history.push(DialogueTurn::new(role, text, index));
    }

    fn touch(&mut self) {
        self.updated_at = Utc::now();
    }
}

pub const DEFAULT_GREETING: &str = "Hello, I am here to help you find the right department. What symptoms are bothering you today?";

pub const DEFAULT_PREAMBLE: &str = "You are a friendly patient navigator. Talk with the patient in plain, everyday \
language and avoid medical jargon. Ask one short question at a time to learn about their symptoms, how long they have \
had them, and how severe they are. Never diagnose or suggest treatment. When you have enough information, reply with \
\"Based on your symptoms, I recommend visiting the <department> department.\" using one of these departments: ";

#[derive(Debug, Clone)]
pub struct TriageConfig {
    pub greeting: String,
    /// Instruction text; the department list is appended when prompting.
    pub preamble: String,
    pub departments: DepartmentSet,
    pub history: HistoryManager,
    pub temperature: Option<f64>,
}

impl TriageConfig {
    pub fn new(departments: DepartmentSet) -> Self {
        Self {
            greeting: DEFAULT_GREETING.to_string(),
            preamble: DEFAULT_PREAMBLE.to_string(),
            departments,
            history: HistoryManager::default(),
            temperature: None,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.greeting.trim().is_empty() {
            return Err(EngineError::InvalidConfig("greeting must be non-empty".into()));
        }
        if self.departments.is_empty() {
            return Err(EngineError::InvalidConfig("at least one department is required".into()));
        }
        self.history.budget.validate()?;
        Ok(())
    }

    /// The system preamble sent with every prompt.
    pub fn system_prompt(&self) -> String {
        let names: Vec<&str> = self.departments.iter().map(Department::name).collect();
        format!("{}{}.", self.preamble, names.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantReply {
    pub text: String,
    pub phase_after: SessionPhase,
    pub recommendation: Option<TriageRecommendation>,
    /// Index of the assistant turn in the stored history.
    pub turn_index: usize,
}

pub fn create_session(cfg: &TriageConfig) -> Result<TriageSession, EngineError> {
    cfg.validate()?;
    let now = Utc::now();
    let mut s = TriageSession {
        id: uuid::Uuid::new_v4().to_string(),
        phase: SessionPhase::Greeting,
        history: Vec::new(),
        budget: cfg.history.budget,
        recommendation: None,
        summary: None,
        created_at: now,
        updated_at: now,
        pending_reply: false,
    };
    s.push(SpeakerRole::Assistant, cfg.greeting.trim().to_string());
    Ok(s)
}

/// Appends the patient's message, asks the backend for the next assistant
/// turn and advances the phase. On backend failure the patient turn stays in
/// history and the next call with the same text retries the reply.
pub fn handle_patient_message(
    session: &mut TriageSession,
    text: &str,
    cfg: &TriageConfig,
    backend: &dyn ChatBackend,
) -> Result<AssistantReply, EngineError> {
    match session.phase {
        SessionPhase::Closed => return Err(EngineError::SessionClosed),
        SessionPhase::Recommended | SessionPhase::Summarized => {
            return Err(EngineError::WrongPhase { phase: session.phase, operation: "message" })
        }
        SessionPhase::Greeting | SessionPhase::Gathering => {}
    }
    let text = text.trim();
    if text.is_empty() {
        return Err(EngineError::EmptyMessage);
    }
    if session.pending_reply {
        let pending = session.history.last().map(|t| t.text.as_str()).unwrap_or_default();
        if pending != text {
            return Err(EngineError::ReplyPending);
        }
    } else {
        session.push(SpeakerRole::Patient, text.to_string());
        session.pending_reply = true;
        session.touch();
    }

    let mut manager = cfg.history.clone();
    manager.budget = session.budget;
    let prompt = manager
        .build(&cfg.system_prompt(), &session.history, Some(backend))
        .map_err(EngineError::from)?;
    let raw = backend.chat(&prompt.messages, &ChatOptions { temperature: cfg.temperature })?;
    let reply = strip_role_tag(&raw).to_string();
    if reply.is_empty() {
        return Err(EngineError::EmptyReply);
    }

    session.push(SpeakerRole::Assistant, reply.clone());
    session.pending_reply = false;
    let turn_index = session.history.len() - 1;
    let recommendation = detect_recommendation(&reply, &cfg.departments).map(|d| TriageRecommendation {
        department: cfg.departments.resolve(&d).cloned().unwrap_or(d),
        rationale: reply.clone(),
        turn_index,
    });
    session.phase = if recommendation.is_some() { SessionPhase::Recommended } else { SessionPhase::Gathering };
    session.recommendation.clone_from(&recommendation);
    session.touch();
    Ok(AssistantReply { text: reply, phase_after: session.phase, recommendation, turn_index })
}

/// Summarizes the full stored history and moves the session to `Summarized`.
pub fn finalize_summary(session: &mut TriageSession, backend: &dyn ChatBackend) -> Result<EhrSummary, EngineError> {
    if session.phase != SessionPhase::Recommended {
        return Err(EngineError::WrongPhase { phase: session.phase, operation: "summary" });
    }
    let summary = generate_summary(&session.conversation(), backend)?;
    session.summary = Some(summary.clone());
    session.phase = SessionPhase::Summarized;
    session.touch();
    Ok(summary)
}

pub fn close_session(session: &mut TriageSession) -> Result<(), EngineError> {
    match session.phase {
        SessionPhase::Closed => Err(EngineError::SessionClosed),
        SessionPhase::Summarized => {
            session.phase = SessionPhase::Closed;
            session.touch();
            Ok(())
        }
        phase => Err(EngineError::WrongPhase { phase, operation: "close" }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{scripted_mock, BackendError, FnBackend};
    use crate::domain::validate_conversation;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn cfg() -> TriageConfig {
        TriageConfig::new(DepartmentSet::new(["respiratory medicine", "cardiology", "neurology"]))
    }

    const REC: &str = "Based on your symptoms, I recommend visiting the respiratory medicine department.";

    #[test]
    fn creation() {
        let a = create_session(&cfg()).unwrap();
        let b = create_session(&cfg()).unwrap();
        assert_eq!(a.phase, SessionPhase::Greeting);
        assert_eq!(a.history.len(), 1);
        assert_eq!(a.history[0].role, SpeakerRole::Assistant);
        assert_ne!(a.id, b.id);
        let custom = TriageConfig { greeting: "Hi there.".into(), ..cfg() };
        assert_eq!(create_session(&custom).unwrap().history[0].text, "Hi there.");
    }

    #[test]
    fn follow_up_then_recommendation() {
        let backend = scripted_mock([("fever", REC), ("cough", "Do you also have a fever?")]);
        let c = cfg();
        let mut s = create_session(&c).unwrap();
        let r = handle_patient_message(&mut s, "I have a cough", &c, &backend).unwrap();
        assert_eq!(r.phase_after, SessionPhase::Gathering);
        assert_eq!(r.text, "Do you also have a fever?");
        assert!(r.recommendation.is_none());
        let r = handle_patient_message(&mut s, "Yes, a mild fever", &c, &backend).unwrap();
        assert_eq!(r.phase_after, SessionPhase::Recommended);
        let rec = r.recommendation.unwrap();
        assert_eq!(rec.department, Department::new("respiratory medicine"));
        assert_eq!(rec.turn_index, 4);
        assert!(validate_conversation(&s.conversation()).is_empty());
        assert!(matches!(
            handle_patient_message(&mut s, "more", &c, &backend),
            Err(EngineError::WrongPhase { phase: SessionPhase::Recommended, .. })
        ));
    }

    #[test]
    fn summary_and_close() {
        let backend = scripted_mock([("cough", REC)]);
        let c = cfg();
        let mut s = create_session(&c).unwrap();
        assert!(matches!(finalize_summary(&mut s, &backend), Err(EngineError::WrongPhase { .. })));
        handle_patient_message(&mut s, "cough", &c, &backend).unwrap();
        let summary = finalize_summary(&mut s, &backend).unwrap();
        assert_eq!(summary.recommended_department, Department::new("respiratory medicine"));
        assert_eq!(s.phase, SessionPhase::Summarized);
        assert!(matches!(finalize_summary(&mut s, &backend), Err(EngineError::WrongPhase { .. })));
        close_session(&mut s).unwrap();
        assert!(matches!(handle_patient_message(&mut s, "hi", &c, &backend), Err(EngineError::SessionClosed)));
    }

    #[test]
    fn empty_message() {
        let c = cfg();
        let mut s = create_session(&c).unwrap();
        let b = scripted_mock::<_, &str, &str>([]);
        assert!(matches!(handle_patient_message(&mut s, "  ", &c, &b), Err(EngineError::EmptyMessage)));
        assert_eq!(s.history.len(), 1);
    }

    #[test]
    fn backend_failure_keeps_patient_turn() {
        let calls = Arc::new(AtomicUsize::new(0));
        let seen = calls.clone();
        let b = FnBackend::new(move |_| {
            if seen.fetch_add(1, Ordering::SeqCst) == 0 {
                Err(BackendError::Status { status: 503, message: "down".into(), retryable: true, attempts: 3 })
            } else {
                Ok("How long has it lasted?".into())
            }
        });
        let c = cfg();
        let mut s = create_session(&c).unwrap();
        assert!(matches!(handle_patient_message(&mut s, "headache", &c, &b), Err(EngineError::Backend(_))));
        assert_eq!(s.phase, SessionPhase::Greeting);
        assert_eq!(s.history.len(), 2);
        assert!(s.pending_reply);
        assert!(matches!(handle_patient_message(&mut s, "other", &c, &b), Err(EngineError::ReplyPending)));
        let r = handle_patient_message(&mut s, "headache", &c, &b).unwrap();
        assert_eq!(r.turn_index, 2);
        assert_eq!(s.history.len(), 3);
        assert!(!s.pending_reply);
        assert!(validate_conversation(&s.conversation()).is_empty());
    }

    #[test]
    fn tagged_reply_is_untagged() {
        let b = FnBackend::new(|_| Ok("[Assistant] Where does it hurt?".into()));
        let c = cfg();
        let mut s = create_session(&c).unwrap();
        assert_eq!(handle_patient_message(&mut s, "pain", &c, &b).unwrap().text, "Where does it hurt?");
    }

    #[test]
    fn prompts_respect_budget() {
        let limit = 200;
        let b = FnBackend::new(move |msgs| {
            let text: Vec<String> = msgs.iter().map(|m| m.content.clone()).collect();
            let n = crate::history::approx_tokens(&text.join("\n"));
            assert!(n <= limit, "prompt of {n} tokens");
            Ok("Anything else you noticed?".into())
        });
        let mut c = cfg();
        c.preamble = "Be brief. Departments: ".into();
        c.history = HistoryManager::new(TokenBudget::new(256, 56).unwrap());
        let mut s = create_session(&c).unwrap();
        for i in 0..40 {
            handle_patient_message(&mut s, &format!("symptom number {i} keeps getting worse every day"), &c, &b).unwrap();
        }
        assert_eq!(s.history.len(), 81);
    }
}

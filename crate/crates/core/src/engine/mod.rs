//! Live triage sessions: greeting, symptom gathering, recommendation and summary.

mod extract;
mod session;
mod store;

use thiserror::Error;

pub use extract::{detect_recommendation, extract_department};
pub use session::{
    close_session, create_session, finalize_summary, handle_patient_message, AssistantReply, SessionPhase, TriageConfig,
    TriageRecommendation, TriageSession, DEFAULT_GREETING, DEFAULT_PREAMBLE,
};
pub use store::{FileStore, MemoryStore, SessionRecord, SessionStore};

use crate::backend::BackendError;
use crate::history::HistoryError;
use crate::synthesis::SynthesisError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("session is closed")]
    SessionClosed,
    #[error("message text is empty")]
    EmptyMessage,
    #[error("cannot {operation} while the session is {phase:?}")]
    WrongPhase { phase: SessionPhase, operation: &'static str },
    #[error("the previous message is still waiting for a reply; resend it to retry")]
    ReplyPending,
    #[error("backend returned an empty reply")]
    EmptyReply,
    #[error("invalid session id `{0}`")]
    InvalidSessionId(String),
    #[error("stored session {id} is unreadable: {reason}")]
    CorruptRecord { id: String, reason: String },
    #[error("invalid triage config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    History(HistoryError),
    #[error(transparent)]
    Summary(SynthesisError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<HistoryError> for EngineError {
    fn from(e: HistoryError) -> Self {
        match e {
            HistoryError::Backend(b) => EngineError::Backend(b),
            other => EngineError::History(other),
        }
    }
}

impl From<SynthesisError> for EngineError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Backend(b) => EngineError::Backend(b),
            other => EngineError::Summary(other),
        }
    }
}

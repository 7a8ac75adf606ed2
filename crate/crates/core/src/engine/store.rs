use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::session::{SessionPhase, TriageRecommendation, TriageSession};
use super::EngineError;
use crate::domain::{Conversation, EhrSummary};
use crate::history::TokenBudget;

/// Persists sessions. Implementations must allow concurrent readers.
pub trait SessionStore: Send + Sync {
    fn save(&self, session: &TriageSession) -> Result<(), EngineError>;
    fn load(&self, id: &str) -> Result<Option<TriageSession>, EngineError>;
    fn ids(&self) -> Result<Vec<String>, EngineError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    sessions: RwLock<HashMap<String, TriageSession>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SessionStore for MemoryStore {
    fn save(&self, session: &TriageSession) -> Result<(), EngineError> {
        self.sessions.write().expect("store lock").insert(session.id.clone(), session.clone());
        Ok(())
    }

    fn load(&self, id: &str) -> Result<Option<TriageSession>, EngineError> {
        Ok(self.sessions.read().expect("store lock").get(id).cloned())
    }

    fn ids(&self) -> Result<Vec<String>, EngineError> {
        let mut ids: Vec<String> = self.sessions.read().expect("store lock").keys().cloned().collect();
        ids.sort();
        Ok(ids)
    }
}

/// One persisted snapshot: the conversation record plus session state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRecord {
    #[serde(flatten)]
    pub conversation: Conversation,
    pub phase: SessionPhase,
    pub budget: TokenBudget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommendation: Option<TriageRecommendation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<EhrSummary>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    #[serde(default)]
    pub pending_reply: bool,
}

impl From<&TriageSession> for SessionRecord {
    fn from(s: &TriageSession) -> Self {
        Self {
            conversation: s.conversation(),
            phase: s.phase,
            budget: s.budget,
            recommendation: s.recommendation.clone(),
            summary: s.summary.clone(),
            created_at: s.created_at,
            updated_at: s.updated_at,
            pending_reply: s.pending_reply,
        }
    }
}

impl From<SessionRecord> for TriageSession {
    fn from(r: SessionRecord) -> Self {
        let mut conv = r.conversation;
        conv.reindex();
        Self {
            id: conv.id,
            phase: r.phase,
            history: conv.turns,
            budget: r.budget,
            recommendation: r.recommendation,
            summary: r.summary,
            created_at: r.created_at,
            updated_at: r.updated_at,
            pending_reply: r.pending_reply,
        }
    }
}

/// One append-only JSONL file per session under `root`; the last line is
/// the current state.
#[derive(Debug)]
pub struct FileStore {
    root: PathBuf,
    write_lock: RwLock<()>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, EngineError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, write_lock: RwLock::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, id: &str) -> Result<PathBuf, EngineError> {
        let safe = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !safe {
            return Err(EngineError::InvalidSessionId(id.to_string()));
        }
        Ok(self.root.join(format!("{id}.jsonl")))
    }
}

impl SessionStore for FileStore {
    fn save(&self, session: &TriageSession) -> Result<(), EngineError> {
        let path = self.path(&session.id)?;
        let mut line = serde_json::to_string(&SessionRecord::from(session)).map_err(std::io::Error::from)?;
        line.push('\n');
        let _guard = self.write_lock.write().expect("store lock");
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }

    fn load(&self, id: &str) -> Result<Option<TriageSession>, EngineError> {
        let path = match self.path(id) {
            Ok(p) => p,
            Err(_) => return Ok(None),
        };
        let _guard = self.write_lock.read().expect("store lock");
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let mut last = None;
        for line in BufReader::new(file).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                last = Some(line);
            }
        }
        let Some(line) = last else { return Ok(None) };
        let record: SessionRecord =
            serde_json::from_str(&line).map_err(|e| EngineError::CorruptRecord { id: id.to_string(), reason: e.to_string() })?;
        Ok(Some(record.into()))
    }

    fn ids(&self) -> Result<Vec<String>, EngineError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

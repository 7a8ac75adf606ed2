use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatMessage, ChatOptions};
use crate::domain::SpeakerRole;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Substring looked for in the latest user message.
    pub matcher: String,
    pub reply: String,
}

impl ScriptRule {
    pub fn new(matcher: impl Into<String>, reply: impl Into<String>) -> Self {
        Self { matcher: matcher.into(), reply: reply.into() }
    }
}

/// Deterministic backend: the first rule whose matcher is a substring of the
/// latest user message supplies the reply.
#[derive(Debug)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    default_reply: String,
    healthy: bool,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>, default_reply: impl Into<String>) -> Self {
        Self { rules, default_reply: default_reply.into(), healthy: true, calls: AtomicUsize::new(0) }
    }

    pub fn with_health(mut self, healthy: bool) -> Self {
        self.healthy = healthy;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn reply_for(&self, input: &str) -> &str {
        self.rules
            .iter()
            .find(|r| input.contains(&r.matcher))
            .map(|r| r.reply.as_str())
            .unwrap_or(&self.default_reply)
    }
}

/// Builds a [`ScriptedBackend`] from `(matcher, reply)` pairs with the default
/// fallback reply "Tell me more.".
pub fn scripted_mock<I, M, R>(script: I) -> ScriptedBackend
where
    I: IntoIterator<Item = (M, R)>,
    M: Into<String>,
    R: Into<String>,
{
    ScriptedBackend::new(script.into_iter().map(|(m, r)| ScriptRule::new(m, r)).collect(), "Tell me more.")
}

fn latest_user(messages: &[ChatMessage]) -> Option<&str> {
    messages
        .iter()
        .rev()
        .find(|m| m.role == SpeakerRole::Patient)
        .or_else(|| messages.last())
        .map(|m| m.content.as_str())
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, messages: &[ChatMessage], _opts: &ChatOptions) -> Result<String, BackendError> {
        let input = latest_user(messages).ok_or_else(|| BackendError::InvalidRequest("no messages".into()))?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.reply_for(input).to_string())
    }

    fn is_healthy(&self) -> bool {
        self.healthy
    }
}

type ChatFn = dyn Fn(&[ChatMessage]) -> Result<String, BackendError> + Send + Sync;

/// Backend backed by a closure over the message list.
pub struct FnBackend {
    f: Box<ChatFn>,
    healthy: bool,
}

impl FnBackend {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&[ChatMessage]) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self { f: Box::new(f), healthy: true }
    }

    pub fn with_health(mut self, healthy: bool) -> Self {
        self.healthy = healthy;
        self
    }
}

impl std::fmt::Debug for FnBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnBackend").field("healthy", &self.healthy).finish_non_exhaustive()
    }
}

impl ChatBackend for FnBackend {
    fn chat(&self, messages: &[ChatMessage], _opts: &ChatOptions) -> Result<String, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::InvalidRequest("no messages".into()));
        }
        (self.f)(messages)
    }

    fn is_healthy(&self) -> bool {
        self.healthy
    }
}

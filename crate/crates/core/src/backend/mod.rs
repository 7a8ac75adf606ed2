//! Chat-completion backends.
//!
//! Everything that talks to a language model goes through [`ChatBackend`].
//! Two implementations ship: [`HttpBackend`] for chat-completion compatible
//! endpoints and [`ScriptedBackend`] for deterministic tests and demos.
//! [`FnBackend`] wraps a closure for ad-hoc fakes.

mod http;
mod scripted;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::SpeakerRole;

pub use http::{backoff_delay, BackendConfig, CallReport, HttpBackend};
pub use scripted::{scripted_mock, FnBackend, ScriptRule, ScriptedBackend};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: SpeakerRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: SpeakerRole, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(SpeakerRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(SpeakerRole::Patient, content)
    }
}

/// Role name on the wire.
pub fn wire_role(role: SpeakerRole) -> &'static str {
    match role {
        SpeakerRole::Patient => "user",
        SpeakerRole::Assistant => "assistant",
        SpeakerRole::System => "system",
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChatOptions {
    /// Overrides the backend's configured temperature.
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend responded {status}: {message}")]
    Status { status: u16, message: String, retryable: bool, attempts: u32 },
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool, attempts: u32 },
    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Status { retryable, .. } | Self::Transport { retryable, .. } => *retryable,
            Self::Timeout { .. } => true,
            Self::InvalidRequest(_) => false,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            Self::Status { status, .. } => Some(*status),
            _ => None,
        }
    }

    /// Total attempts made before giving up (0 when the call never went out).
    pub fn attempts(&self) -> u32 {
        match self {
            Self::Status { attempts, .. } | Self::Transport { attempts, .. } | Self::Timeout { attempts } => *attempts,
            Self::InvalidRequest(_) => 0,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    /// Returns the first completion for `messages`.
    fn chat(&self, messages: &[ChatMessage], opts: &ChatOptions) -> Result<String, BackendError>;

    /// Cheap reachability probe used by the service before opening sessions.
    fn is_healthy(&self) -> bool {
        true
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn chat(&self, messages: &[ChatMessage], opts: &ChatOptions) -> Result<String, BackendError> {
        (**self).chat(messages, opts)
    }

    fn is_healthy(&self) -> bool {
        (**self).is_healthy()
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn chat(&self, messages: &[ChatMessage], opts: &ChatOptions) -> Result<String, BackendError> {
        (**self).chat(messages, opts)
    }

    fn is_healthy(&self) -> bool {
        (**self).is_healthy()
    }
}

/// Backend selection as written in a backend config file (TOML).
///
/// ```toml
/// kind = "http"
/// endpoint_url = "https://api.openai.com/v1/chat/completions"
/// model_name = "gpt-3.5-turbo"
/// api_key_env_var = "OPENAI_API_KEY"
/// ```
///
/// or `kind = "scripted"` with `default_reply` and `[[rules]]` tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Http(BackendConfig),
    Scripted {
        #[serde(default)]
        rules: Vec<ScriptRule>,
        #[serde(default = "default_reply")]
        default_reply: String,
        #[serde(default = "yes")]
        healthy: bool,
    },
}

fn default_reply() -> String {
    "Tell me more.".to_string()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Error)]
pub enum BackendConfigError {
    #[error("reading backend config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing backend config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid backend config: {0}")]
    Invalid(String),
}

impl BackendSpec {
    pub fn from_toml(text: &str) -> Result<Self, BackendConfigError> {
        let spec: BackendSpec = toml::from_str(text)?;
        if let BackendSpec::Http(cfg) = &spec {
            cfg.validate().map_err(BackendConfigError::Invalid)?;
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, BackendConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn build(self) -> Arc<dyn ChatBackend> {
        match self {
            BackendSpec::Http(cfg) => Arc::new(HttpBackend::new(cfg)),
            BackendSpec::Scripted { rules, default_reply, healthy } => {
                Arc::new(ScriptedBackend::new(rules, default_reply).with_health(healthy))
            }
        }
    }
}

pub(crate) fn duration_secs<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
    let secs = f64::deserialize(d)?;
    if !(secs.is_finite() && secs > 0.0) {
        return Err(serde::de::Error::custom("timeout must be positive"));
    }
    Ok(Duration::from_secs_f64(secs))
}

pub(crate) fn serialize_secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

use std::io;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{duration_secs, serialize_secs, wire_role, BackendError, ChatBackend, ChatMessage, ChatOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token. The key
    /// itself never appears in configuration files.
    pub api_key_env_var: String,
    #[serde(rename = "timeout_secs", default = "default_timeout", deserialize_with = "duration_secs", serialize_with = "serialize_secs")]
    pub timeout: Duration,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(rename = "backoff_base_ms", default = "default_backoff", with = "millis")]
    pub backoff_base: Duration,
    #[serde(default = "default_factor")]
    pub backoff_factor: u32,
}

fn default_timeout() -> Duration {
    Duration::from_secs(30)
}
fn default_retries() -> u32 {
    2
}
fn default_temperature() -> f64 {
    0.7
}
fn default_backoff() -> Duration {
    Duration::from_millis(500)
}
fn default_factor() -> u32 {
    2
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>, api_key_env_var: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            api_key_env_var: api_key_env_var.into(),
            timeout: default_timeout(),
            max_retries: default_retries(),
            temperature: default_temperature(),
            backoff_base: default_backoff(),
            backoff_factor: default_factor(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.endpoint_url.trim().is_empty() {
            return Err("endpoint_url is empty".into());
        }
        if self.timeout.is_zero() {
            return Err("timeout must be positive".into());
        }
        if self.backoff_factor == 0 {
            return Err("backoff_factor must be at least 1".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err("temperature must lie in [0, 2]".into());
        }
        Ok(())
    }
}

/// Delay before retry number `retry` (0-based): `base * factor^retry`.
pub fn backoff_delay(base: Duration, factor: u32, retry: u32) -> Duration {
    base.saturating_mul(factor.saturating_pow(retry))
}

/// What a single [`HttpBackend::chat_with_report`] call did on the wire.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CallReport {
    pub attempts: u32,
    pub retries: u32,
    pub delays: Vec<Duration>,
}

/// Client for chat-completion compatible HTTP endpoints.
#[derive(Debug)]
pub struct HttpBackend {
    cfg: BackendConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Failed(BackendError),
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<io::Error>() {
            if matches!(io.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(cfg.timeout)
            .max_idle_connections_per_host(8)
            .build();
        Self { cfg, agent }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn request_body(&self, messages: &[ChatMessage], opts: &ChatOptions) -> Value {
        let msgs: Vec<Value> = messages
            .iter()
            .map(|m| json!({ "role": wire_role(m.role), "content": m.content }))
            .collect();
        json!({
            "model": self.cfg.model_name,
            "messages": msgs,
            "temperature": opts.temperature.unwrap_or(self.cfg.temperature),
        })
    }

    fn attempt(&self, body: &Value, attempt_no: u32) -> Attempt {
        let mut req = self.agent.post(&self.cfg.endpoint_url).set("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&self.cfg.api_key_env_var) {
            if !key.is_empty() {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
        }
        match req.send_json(body) {
            Ok(resp) => {
                let status = resp.status();
                match resp.into_json::<Value>() {
                    Ok(v) => match v.pointer("/choices/0/message/content").and_then(Value::as_str) {
                        Some(text) => Attempt::Done(text.to_string()),
                        None => Attempt::Failed(BackendError::Status {
                            status,
                            message: "response has no choices[0].message.content".into(),
                            retryable: false,
                            attempts: attempt_no,
                        }),
                    },
                    Err(e) => Attempt::Failed(BackendError::Transport {
                        message: format!("reading response body: {e}"),
                        retryable: true,
                        attempts: attempt_no,
                    }),
                }
            }
            Err(ureq::Error::Status(status, resp)) => {
                let message = resp.into_string().unwrap_or_default();
                Attempt::Failed(BackendError::Status {
                    status,
                    message,
                    retryable: (500..600).contains(&status),
                    attempts: attempt_no,
                })
            }
            Err(ureq::Error::Transport(t)) => {
                if is_timeout(&t) {
                    Attempt::Failed(BackendError::Timeout { attempts: attempt_no })
                } else {
                    Attempt::Failed(BackendError::Transport { message: t.to_string(), retryable: true, attempts: attempt_no })
                }
            }
        }
    }

    /// Sends the request, retrying transport failures and 5xx responses.
    /// 4xx responses are returned immediately.
    pub fn chat_with_report(&self, messages: &[ChatMessage], opts: &ChatOptions) -> (Result<String, BackendError>, CallReport) {
        let mut report = CallReport::default();
        if messages.is_empty() {
            return (Err(BackendError::InvalidRequest("no messages".into())), report);
        }
        let body = self.request_body(messages, opts);
        loop {
            report.attempts += 1;
            match self.attempt(&body, report.attempts) {
                Attempt::Done(text) => return (Ok(text), report),
                Attempt::Failed(err) => {
                    if !err.is_retryable() || report.retries >= self.cfg.max_retries {
                        return (Err(err), report);
                    }
                    let delay = backoff_delay(self.cfg.backoff_base, self.cfg.backoff_factor, report.retries);
                    tracing::debug!(attempt = report.attempts, ?delay, error = %err, "retrying chat request");
                    report.delays.push(delay);
                    report.retries += 1;
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

impl ChatBackend for HttpBackend {
    fn chat(&self, messages: &[ChatMessage], opts: &ChatOptions) -> Result<String, BackendError> {
        self.chat_with_report(messages, opts).0
    }

    /// Any HTTP response at all counts as reachable.
    fn is_healthy(&self) -> bool {
        let probe = self.agent.get(&self.cfg.endpoint_url).timeout(Duration::from_secs(2));
        match probe.call() {
            Ok(_) | Err(ureq::Error::Status(..)) => true,
            Err(ureq::Error::Transport(_)) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SpeakerRole;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// One-shot server answering each connection with the next status in `statuses`.
    fn serve(statuses: Vec<u16>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let seen = bodies.clone();
        std::thread::spawn(move || {
            for status in statuses {
                let Ok((mut stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0u8; len];
                let _ = reader.read_exact(&mut body);
                seen.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
                let payload = if status == 200 {
                    r#"{"choices":[{"message":{"role":"assistant","content":"pong"}}]}"#.to_string()
                } else {
                    format!(r#"{{"error":"status {status}"}}"#)
                };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            }
        });
        (url, bodies)
    }

    fn backend(url: &str, retries: u32) -> HttpBackend {
        let mut cfg = BackendConfig::new(url, "test-model", "TRIAGE_HTTP_TEST_UNSET_KEY");
        cfg.max_retries = retries;
        cfg.backoff_base = Duration::from_millis(5);
        HttpBackend::new(cfg)
    }

    #[test]
    fn request_shape_and_success() {
        let (url, bodies) = serve(vec![200]);
        let b = backend(&url, 0);
        let msgs = [ChatMessage::system("be brief"), ChatMessage::user("ping"), ChatMessage::new(SpeakerRole::Assistant, "x")];
        assert_eq!(b.chat(&msgs, &ChatOptions { temperature: Some(0.1) }).unwrap(), "pong");
        let body: Value = serde_json::from_str(&bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.1);
        let roles: Vec<&str> = body["messages"].as_array().unwrap().iter().map(|m| m["role"].as_str().unwrap()).collect();
        assert_eq!(roles, vec!["system", "user", "assistant"]);
    }

    #[test]
    fn transient_5xx_then_success() {
        let (url, _) = serve(vec![503, 500, 200]);
        let (res, report) = backend(&url, 2).chat_with_report(&[ChatMessage::user("ping")], &ChatOptions::default());
        assert_eq!(res.unwrap(), "pong");
        assert_eq!(report.retries, 2);
        assert_eq!(report.attempts, 3);
        assert_eq!(report.delays, vec![Duration::from_millis(5), Duration::from_millis(10)]);
    }

    #[test]
    fn exhausted_retries() {
        let (url, _) = serve(vec![500, 500, 500]);
        let (res, report) = backend(&url, 2).chat_with_report(&[ChatMessage::user("ping")], &ChatOptions::default());
        let err = res.unwrap_err();
        assert_eq!(err.status(), Some(500));
        assert!(err.is_retryable());
        assert_eq!(report.attempts, 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, _) = serve(vec![401]);
        let (res, report) = backend(&url, 3).chat_with_report(&[ChatMessage::user("ping")], &ChatOptions::default());
        let err = res.unwrap_err();
        assert_eq!(err.status(), Some(401));
        assert!(!err.is_retryable());
        assert_eq!(report.retries, 0);
        assert_eq!(err.attempts(), 1);
    }

    #[test]
    fn unreachable_is_unhealthy_and_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let b = backend(&url, 1);
        assert!(!b.is_healthy());
        let (res, report) = b.chat_with_report(&[ChatMessage::user("x")], &ChatOptions::default());
        assert!(matches!(res, Err(BackendError::Transport { .. })));
        assert_eq!(report.attempts, 2);
    }

    #[test]
    fn backoff_is_non_decreasing() {
        let base = Duration::from_millis(500);
        let delays: Vec<_> = (0..6).map(|i| backoff_delay(base, 2, i)).collect();
        assert_eq!(delays[0], Duration::from_millis(500));
        assert_eq!(delays[1], Duration::from_millis(1000));
        assert!(delays.windows(2).all(|w| w[0] <= w[1]));
    }
}

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::Value;

use triage_core::backend::{ChatBackend, ScriptRule, ScriptedBackend};
use triage_core::domain::DepartmentSet;
use triage_core::engine::{SessionStore, TriageConfig};
use triage_service::api::{router, serve, AppState};

pub const RECOMMENDATION: &str = "Based on your symptoms, I recommend visiting the respiratory medicine department.";

pub const SUMMARY_REPLY: &str = "Chief complaint: cough for three days\nSymptoms:\n- cough\n- fever since yesterday\n- shortness of breath on stairs\nHistory: none reported";

/// Replies keyed on the latest patient message. The summary rule matches
/// the transcript, which is the only input that quotes the recommendation.
pub fn scripted_triage() -> ScriptedBackend {
    ScriptedBackend::new(
        vec![
            ScriptRule::new("I recommend visiting", SUMMARY_REPLY),
            ScriptRule::new("cough", "Do you have a fever?"),
            ScriptRule::new("yesterday", "Are you short of breath?"),
            ScriptRule::new("stairs", RECOMMENDATION),
        ],
        "Tell me more.",
    )
}

pub fn triage_config() -> TriageConfig {
    TriageConfig::new(DepartmentSet::new(["respiratory medicine", "cardiology", "neurology", "dermatology"]))
}

pub struct TestServer {
    pub base: String,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(backend: Arc<dyn ChatBackend>, store: Arc<dyn SessionStore>) -> Self {
        let state = AppState::new(store, backend, triage_config()).unwrap();
        let app = router(state, Some("http://localhost:5173")).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                serve(listener, app, async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
            });
        });
        Self { base, shutdown: Some(tx), thread: Some(thread) }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn post(&self, path: &str, body: Option<Value>) -> (u16, Value) {
        let req = ureq::post(&self.url(path));
        let res = match body {
            Some(b) => req.send_json(b),
            None => req.call(),
        };
        decode(res)
    }

    pub fn post_raw(&self, path: &str, content_type: &str, body: &str) -> (u16, Value) {
        decode(ureq::post(&self.url(path)).set("Content-Type", content_type).send_string(body))
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        decode(ureq::get(&self.url(path)).call())
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn decode(res: Result<ureq::Response, ureq::Error>) -> (u16, Value) {
    let resp = match res {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("transport error: {e}"),
    };
    let status = resp.status();
    let text = resp.into_string().unwrap();
    let body = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap_or(Value::String(text)) };
    (status, body)
}

/// Answers each connection with the next status in `statuses`. A 200 carries
/// a chat completion with content "ok".
pub fn fake_completion_server(statuses: Vec<u16>) -> (String, Arc<Mutex<usize>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(Mutex::new(0usize));
    let seen = hits.clone();
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
            *seen.lock().unwrap() += 1;
            let payload = if status == 200 {
                r#"{"choices":[{"message":{"role":"assistant","content":"ok"}}]}"#.to_string()
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
    (url, hits)
}

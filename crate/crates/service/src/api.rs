//! REST endpoints for live triage sessions.
//!
//! | method | path | success |
//! |---|---|---|
//! | POST | `/api/sessions` | 201 [`CreatedSession`] |
//! | GET | `/api/sessions/{id}` | 200 [`SessionView`] |
//! | POST | `/api/sessions/{id}/messages` | 200 [`MessageReply`] |
//! | GET | `/api/sessions/{id}/summary` | 200 [`EhrSummary`] |
//! | GET | `/api/health` | 200 [`Health`] |
//!
//! Failures carry an [`ApiError`] body. Requests against one session are
//! serialized; the engine and store run on the blocking pool.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use triage_core::backend::ChatBackend;
use triage_core::domain::{Department, EhrSummary, SpeakerRole};
use triage_core::engine::{
    create_session, finalize_summary, handle_patient_message, EngineError, SessionPhase, SessionStore, TriageConfig,
    TriageSession,
};

use crate::error::{ApiError, BACKEND_UNAVAILABLE};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub greeting: String,
    pub phase: SessionPhase,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationView {
    pub department: Department,
    pub rationale: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageReply {
    pub reply: String,
    pub phase: SessionPhase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommendation: Option<RecommendationView>,
    pub turn_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageView {
    pub role: SpeakerRole,
    pub text: String,
    pub index: usize,
}

/// Full session state, for clients restoring a conversation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub phase: SessionPhase,
    pub messages: Vec<MessageView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommendation: Option<RecommendationView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<EhrSummary>,
    pub pending_reply: bool,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl From<&TriageSession> for SessionView {
    fn from(s: &TriageSession) -> Self {
        Self {
            session_id: s.id.clone(),
            phase: s.phase,
            messages: s
                .history
                .iter()
                .map(|t| MessageView { role: t.role, text: t.text.clone(), index: t.index })
                .collect(),
            recommendation: s.recommendation.as_ref().map(|r| RecommendationView {
                department: r.department.clone(),
                rationale: r.rationale.clone(),
            }),
            summary: s.summary.clone(),
            pending_reply: s.pending_reply,
            created_at: s.created_at,
            updated_at: s.updated_at,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub backend_reachable: bool,
}

type SessionLock = Arc<tokio::sync::Mutex<()>>;

#[derive(Clone)]
pub struct AppState {
    store: Arc<dyn SessionStore>,
    backend: Arc<dyn ChatBackend>,
    config: Arc<TriageConfig>,
    locks: Arc<Mutex<HashMap<String, SessionLock>>>,
}

impl AppState {
    pub fn new(store: Arc<dyn SessionStore>, backend: Arc<dyn ChatBackend>, config: TriageConfig) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self { store, backend, config: Arc::new(config), locks: Arc::default() })
    }

    pub fn store(&self) -> &Arc<dyn SessionStore> {
        &self.store
    }

    fn lock_for(&self, id: &str) -> SessionLock {
        let mut locks = self.locks.lock().expect("lock table");
        locks.entry(id.to_string()).or_default().clone()
    }

    async fn blocking<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(AppState) -> Result<T, ApiError> + Send + 'static,
    {
        let state = self.clone();
        tokio::task::spawn_blocking(move || f(state))
            .await
            .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
    }

    fn load(&self, id: &str) -> Result<TriageSession, ApiError> {
        self.store.load(id)?.ok_or_else(|| ApiError::not_found(id))
    }

    /// Runs `f` on the stored session under its lock and saves any change,
    /// including changes made before `f` failed.
    async fn with_session<T, F>(&self, id: String, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&AppState, &mut TriageSession) -> Result<T, EngineError> + Send + 'static,
    {
        let probe = id.clone();
        self.blocking(move |s| s.load(&probe).map(drop)).await?;
        let lock = self.lock_for(&id);
        let _guard = lock.lock().await;
        self.blocking(move |s| {
            let mut session = s.load(&id)?;
            let before = session.clone();
            let out = f(&s, &mut session);
            if session != before {
                s.store.save(&session)?;
            }
            Ok(out?)
        })
        .await
    }
}

/// Builds the router. `cors_origin` of `None` or `"*"` allows any origin.
pub fn router(state: AppState, cors_origin: Option<&str>) -> Result<Router, ApiError> {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match cors_origin {
        None | Some("*") => cors.allow_origin(Any),
        Some(origin) => cors.allow_origin(
            HeaderValue::from_str(origin).map_err(|_| ApiError::validation(format!("invalid CORS origin `{origin}`")))?,
        ),
    };
    Ok(Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}", get(show))
        .route("/api/sessions/{id}/messages", post(message))
        .route("/api/sessions/{id}/summary", get(summary))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, crate::error::VALIDATION_FAILED, "no such route") })
        .layer(cors)
        .with_state(state))
}

async fn health(State(state): State<AppState>) -> Result<Json<Health>, ApiError> {
    let reachable = state.blocking(|s| Ok(s.backend.is_healthy())).await?;
    Ok(Json(Health { status: "ok".into(), backend_reachable: reachable }))
}

async fn create(State(state): State<AppState>) -> Result<(StatusCode, Json<CreatedSession>), ApiError> {
    let created = state
        .blocking(|s| {
            if !s.backend.is_healthy() {
                return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, BACKEND_UNAVAILABLE, "backend health check failed"));
            }
            let session = create_session(&s.config)?;
            s.store.save(&session)?;
            let greeting = session.history[0].text.clone();
            Ok(CreatedSession { session_id: session.id, greeting, phase: session.phase })
        })
        .await?;
    tracing::info!(session = %created.session_id, "session created");
    Ok((StatusCode::CREATED, Json(created)))
}

async fn show(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let session = state.blocking(move |s| s.load(&id)).await?;
    Ok(Json(SessionView::from(&session)))
}

async fn message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<MessageRequest>, JsonRejection>,
) -> Result<Json<MessageReply>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::validation(e.body_text()))?;
    let reply = state
        .with_session(id, move |s, session| handle_patient_message(session, &req.text, &s.config, s.backend.as_ref()))
        .await?;
    Ok(Json(MessageReply {
        reply: reply.text,
        phase: reply.phase_after,
        recommendation: reply
            .recommendation
            .map(|r| RecommendationView { department: r.department, rationale: r.rationale }),
        turn_index: reply.turn_index,
    }))
}

async fn summary(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<EhrSummary>, ApiError> {
    let summary = state
        .with_session(id, |s, session| match (session.phase, &session.summary) {
            (SessionPhase::Summarized | SessionPhase::Closed, Some(cached)) => Ok(cached.clone()),
            (SessionPhase::Recommended, _) => finalize_summary(session, s.backend.as_ref()),
            (phase, _) => Err(EngineError::WrongPhase { phase, operation: "summary" }),
        })
        .await?;
    Ok(Json(summary))
}

/// Serves `app` on `listener` until `shutdown` resolves.
pub async fn serve<F>(listener: tokio::net::TcpListener, app: Router, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

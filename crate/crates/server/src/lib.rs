//! HTTP surface for live sessions: JSON endpoints plus a server-sent event
//! stream (`delta`, `state`, `done`) for each mentor reply.

mod error;

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream;
use mentor_core::gateway::sniff_media_type;
use mentor_core::labels;
use mentor_core::metrics::compare_conditions;
use mentor_core::model::{
    Attachment, AttachmentKind, Condition, GoalChecklist, Phase, QuestionAgenda, ResponseViolation, Role, Session,
    StrategyTag, Turn,
};
use mentor_core::orchestrator::{MentorReply, Orchestrator};
use mentor_core::report::{export_report, ReportFormat};
use mentor_core::store::{export_transcript, IndexEntry, SessionStore, TranscriptStyle};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

pub use error::{ApiError, ERROR_CODES};

/// Header carrying the client's idempotency key on message posts.
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

/// Largest accepted request body (artifact uploads).
pub const MAX_UPLOAD_BYTES: usize = 20 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Built web UI served at `/` when present.
    pub ui_dir: Option<PathBuf>,
    /// Words per `delta` event.
    pub delta_words: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            ui_dir: None,
            delta_words: 8,
        }
    }
}

/// Shared handler state. Requests for one session are serialized in arrival
/// order; different sessions proceed concurrently.
pub struct AppState {
    orchestrator: Arc<Orchestrator>,
    store: Arc<SessionStore>,
    config: ServerConfig,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    /// (session id, idempotency key) -> index of the mentee turn it created.
    idempotency: Mutex<HashMap<(String, String), usize>>,
}

impl AppState {
    pub fn new(orchestrator: Orchestrator, store: SessionStore, config: ServerConfig) -> Arc<Self> {
        Arc::new(AppState {
            orchestrator: Arc::new(orchestrator),
            store: Arc::new(store),
            config,
            locks: Mutex::new(HashMap::new()),
            idempotency: Mutex::new(HashMap::new()),
        })
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orchestrator
    }

    fn session_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods(Any)
        .allow_headers(Any);
    let api = Router::new()
        .route("/api/sessions", post(create_session).get(list_sessions))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/attachments", post(upload_attachment))
        .route("/api/sessions/{id}/messages", post(post_message))
        .route("/api/sessions/{id}/retry", post(retry_message))
        .route("/api/sessions/{id}/state", get(get_state))
        .route("/api/sessions/{id}/export", get(export_session))
        .route("/api/reports", get(get_report))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES));
    let app = match state.config.ui_dir.clone() {
        Some(dir) if dir.is_dir() => api.fallback_service(ServeDir::new(dir)),
        _ => api,
    };
    app.layer(cors).with_state(state)
}

/// Serves until the listener fails or the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub condition: String,
    #[serde(default)]
    pub opener: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct Created {
    pub session_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub greeting_turn: Option<Turn>,
    pub phase: Phase,
    /// Index of the opener turn; it is answered by `POST .../retry`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opener_turn: Option<usize>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let condition: Condition = body
        .condition
        .parse()
        .map_err(|_| ApiError::bad_request("invalid_condition", format!("unknown condition `{}`", body.condition)))?;
    let created = blocking(move || {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut session = state.orchestrator.start_session(condition, id.clone());
        let greeting_turn = session.turns.first().filter(|t| t.scripted).cloned();
        let opener_turn = match body.opener.as_deref().map(str::trim).filter(|o| !o.is_empty()) {
            Some(opener) => Some(state.orchestrator.append_mentee(&mut session, opener)?),
            None => None,
        };
        state.store.save_session(&session)?;
        Ok(Created {
            session_id: id,
            greeting_turn,
            phase: session.phase.phase,
            opener_turn,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Result<Json<Vec<SessionSummary>>, ApiError> {
    blocking(move || {
        let index = state.store.index()?;
        Ok(Json(
            index
                .into_iter()
                .map(|(id, IndexEntry { condition, created_at, .. })| SessionSummary {
                    session_id: id,
                    condition,
                    created_at,
                })
                .collect(),
        ))
    })
    .await
}

#[derive(Debug, Serialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub condition: Condition,
    pub created_at: chrono::DateTime<chrono::Utc>,
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Session>, ApiError> {
    let lock = state.session_lock(&id);
    let _guard = lock.lock().await;
    blocking(move || Ok(Json(state.store.load_session(&id)?))).await
}

#[derive(Debug, Serialize)]
pub struct AttachmentAccepted {
    pub phase: Phase,
    pub bytes_ref: String,
    pub media_type: String,
}

async fn upload_attachment(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    mut multipart: Multipart,
) -> Result<Json<AttachmentAccepted>, ApiError> {
    let mut bytes: Option<(Vec<u8>, Option<String>)> = None;
    let mut caption = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        if name == "caption" {
            caption = Some(field.text().await.map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))?);
        } else if name == "file" || field.file_name().is_some() {
            let declared = field.content_type().map(str::to_string);
            let data = field
                .bytes()
                .await
                .map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))?;
            bytes = Some((data.to_vec(), declared));
        }
    }
    let (bytes, declared) = bytes.ok_or_else(|| ApiError::bad_request("invalid_request", "multipart field `file` is required"))?;

    let lock = state.session_lock(&id);
    let _guard = lock.lock().await;
    blocking(move || {
        let mut session = state.store.load_session(&id)?;
        let sniffed = sniff_media_type(&bytes);
        let media_type = if sniffed.starts_with("image/") {
            sniffed.to_string()
        } else {
            declared.unwrap_or_else(|| sniffed.to_string())
        };
        if !sniffed.starts_with("image/") {
            return Err(mentor_core::orchestrator::OrchestratorError::NotAnImage(media_type).into());
        }
        let bytes_ref = state.store.put_blob(&bytes)?;
        let attachment = Attachment {
            kind: AttachmentKind::ArtifactImage,
            media_type: media_type.clone(),
            bytes_ref: bytes_ref.clone(),
            caption: caption.filter(|c| !c.trim().is_empty()),
            at_turn: 0,
        };
        state.orchestrator.submit_attachment(&mut session, attachment)?;
        state.store.save_session(&session)?;
        Ok(Json(AttachmentAccepted {
            phase: session.phase.phase,
            bytes_ref,
            media_type,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct MessageBody {
    pub content: String,
}

/// Payload of the `state` event.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StreamState {
    pub phase: Phase,
    pub goals: GoalChecklist,
    pub active_question: Option<ActiveQuestion>,
    pub agenda: QuestionAgenda,
    pub violations: Vec<ResponseViolation>,
    pub detected_strategy: Option<StrategyTag>,
    pub turn_index: usize,
    pub closed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ActiveQuestion {
    pub id: u32,
    pub text: String,
}

fn active_question(session: &Session) -> Option<ActiveQuestion> {
    let idx = session.phase.active_question?;
    session.agenda.questions.get(idx).map(|q| ActiveQuestion {
        id: q.id,
        text: q.text.clone(),
    })
}

fn stream_state(session: &Session, reply: &MentorReply) -> StreamState {
    StreamState {
        phase: session.phase.phase,
        goals: session.phase.goals.clone(),
        active_question: active_question(session),
        agenda: session.agenda.clone(),
        violations: reply.violations.clone(),
        detected_strategy: reply.detected_strategy,
        turn_index: reply.turn.index,
        closed: session.closed,
    }
}

/// Splits text into chunks of `words` whitespace-separated words; the
/// chunks concatenate back to the original text.
pub fn chunk_text(text: &str, words: usize) -> Vec<String> {
    let words = words.max(1);
    let mut out = Vec::new();
    let mut current = String::new();
    let mut count = 0;
    for piece in text.split_inclusive(char::is_whitespace) {
        current.push_str(piece);
        if !piece.trim().is_empty() {
            count += 1;
        }
        if count >= words {
            out.push(std::mem::take(&mut current));
            count = 0;
        }
    }
    if !current.is_empty() || out.is_empty() {
        out.push(current);
    }
    out
}

type EventStream = Sse<futures::stream::Iter<std::vec::IntoIter<Result<Event, Infallible>>>>;

fn reply_stream(state: &AppState, session: &Session, reply: &MentorReply) -> EventStream {
    let mut events = Vec::new();
    for chunk in chunk_text(&reply.turn.content, state.config.delta_words) {
        events.push(Ok(Event::default()
            .event("delta")
            .data(serde_json::json!({ "text": chunk }).to_string())));
    }
    let st = stream_state(session, reply);
    events.push(Ok(Event::default()
        .event("state")
        .data(serde_json::to_string(&st).expect("state serializes"))));
    events.push(Ok(Event::default()
        .event("done")
        .data(serde_json::json!({ "turn_index": reply.turn.index }).to_string())));
    Sse::new(stream::iter(events))
}

/// Rebuilds the reply for a mentee turn that was already answered.
fn stored_reply(session: &Session, mentee_index: usize) -> Option<MentorReply> {
    let turn = session.turns.get(mentee_index + 1).filter(|t| t.role == Role::Mentor)?.clone();
    let detected_strategy = match session.condition {
        Condition::Mentor => labels::strategy_tags(&turn.content).into_iter().next(),
        Condition::Baseline => None,
    };
    Some(MentorReply {
        violations: turn.violations.clone(),
        turn,
        detected_strategy,
        state_after: session.phase.clone(),
    })
}

enum Action {
    Message { content: String, key: Option<String> },
    Retry,
}

async fn run_exchange(state: Arc<AppState>, id: String, action: Action) -> Result<Response, ApiError> {
    let lock = state.session_lock(&id);
    let _guard = lock.lock().await;
    let worker = state.clone();
    let (session, reply) = blocking(move || {
        let state = worker;
        let mut session = state.store.load_session(&id)?;
        let before = session.turns.len();
        let result = match action {
            Action::Retry => state.orchestrator.retry_pending(&mut session),
            Action::Message { content, key } => {
                let known = key.as_ref().and_then(|k| {
                    let map = state.idempotency.lock().unwrap_or_else(|p| p.into_inner());
                    map.get(&(id.clone(), k.clone())).copied()
                });
                match known {
                    Some(mentee_index) => match stored_reply(&session, mentee_index) {
                        Some(reply) => return Ok((session, reply)),
                        None if session.turns.len() == mentee_index + 1 => state.orchestrator.retry_pending(&mut session),
                        None => state.orchestrator.handle_mentee_message(&mut session, &content),
                    },
                    None => {
                        let r = state.orchestrator.handle_mentee_message(&mut session, &content);
                        if let (Some(k), Some(t)) = (key, session.turns.get(before)) {
                            if t.role == Role::Mentee {
                                let mut map = state.idempotency.lock().unwrap_or_else(|p| p.into_inner());
                                map.insert((id.clone(), k), before);
                            }
                        }
                        r
                    }
                }
            }
        };
        if session.turns.len() != before || result.is_ok() {
            state.store.save_session(&session)?;
        }
        Ok((session, result?))
    })
    .await?;
    Ok(reply_stream(&state, &session, &reply).into_response())
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(body): Json<MessageBody>,
) -> Result<Response, ApiError> {
    if body.content.trim().is_empty() {
        return Err(ApiError::bad_request("invalid_request", "message content is empty"));
    }
    let key = headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .filter(|k| !k.is_empty());
    run_exchange(state, id, Action::Message { content: body.content, key }).await
}

async fn retry_message(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    run_exchange(state, id, Action::Retry).await
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionState {
    pub session_id: String,
    pub condition: Condition,
    pub phase: Phase,
    pub goals: GoalChecklist,
    pub agenda: QuestionAgenda,
    pub active_question: Option<ActiveQuestion>,
    pub turn_count: usize,
    pub closed: bool,
    pub warnings: Vec<String>,
}

pub fn session_state(session: &Session) -> SessionState {
    SessionState {
        session_id: session.id.clone(),
        condition: session.condition,
        phase: session.phase.phase,
        goals: session.phase.goals.clone(),
        agenda: session.agenda.clone(),
        active_question: active_question(session),
        turn_count: session.turns.len(),
        closed: session.closed,
        warnings: session.warnings.clone(),
    }
}

async fn get_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    let lock = state.session_lock(&id);
    let _guard = lock.lock().await;
    blocking(move || Ok(Json(session_state(&state.store.load_session(&id)?)))).await
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    #[serde(default)]
    pub style: Option<String>,
}

async fn export_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let style: TranscriptStyle = q
        .style
        .as_deref()
        .unwrap_or("plain")
        .parse()
        .map_err(|e: String| ApiError::bad_request("invalid_style", e))?;
    let text = blocking(move || Ok(export_transcript(&state.store.load_session(&id)?, style))).await?;
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("text/plain; charset=utf-8"))], text).into_response())
}

#[derive(Debug, Deserialize)]
pub struct ReportQuery {
    pub ids: String,
    #[serde(default)]
    pub format: Option<String>,
}

async fn get_report(State(state): State<Arc<AppState>>, Query(q): Query<ReportQuery>) -> Result<Response, ApiError> {
    let format: ReportFormat = q
        .format
        .as_deref()
        .unwrap_or("json")
        .parse()
        .map_err(|e: String| ApiError::bad_request("invalid_format", e))?;
    let ids: Vec<String> = q
        .ids
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if ids.is_empty() {
        return Err(ApiError::bad_request("invalid_request", "ids must list at least one session"));
    }
    let body = blocking(move || {
        let sessions = ids
            .iter()
            .map(|id| state.store.load_session(id))
            .collect::<Result<Vec<_>, _>>()?;
        let report = compare_conditions(&sessions)?;
        Ok(export_report(&report, format))
    })
    .await?;
    let content_type = match format {
        ReportFormat::Json => "application/json",
        ReportFormat::Csv => "text/csv; charset=utf-8",
        ReportFormat::Markdown => "text/markdown; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static(content_type))], body).into_response())
}

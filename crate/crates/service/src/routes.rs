use std::collections::HashMap;
use std::path::{Component, Path as FsPath};
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use fidbench_core::{jsonl, AnnotationEvent};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::scheduler::{build_queue, session_seed};
use crate::{AppState, Session};

pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/:id/next", get(next_pair))
        .route("/api/session/:id/answer", post(answer))
        .route("/api/progress", get(progress))
        .route("/api/admin/export", get(export))
        .route("/images/:pair_id/:role", get(image))
        .fallback(static_asset)
        .with_state(state)
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl ApiError {
    fn not_found(what: impl Into<String>) -> Self {
        Self(StatusCode::NOT_FOUND, what.into())
    }

    fn conflict(what: impl Into<String>) -> Self {
        Self(StatusCode::CONFLICT, what.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<fidbench_core::Error> for ApiError {
    fn from(e: fidbench_core::Error) -> Self {
        use fidbench_core::Error as E;
        let status = match e {
            E::Conflict(_) => StatusCode::CONFLICT,
            E::NotFound(_) => StatusCode::NOT_FOUND,
            E::Argument(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
struct CreateSession {
    annotator_name: String,
}

#[derive(Serialize)]
struct SessionCreated {
    session_id: String,
    total_pairs: usize,
}

async fn create_session(State(app): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> ApiResult<Json<SessionCreated>> {
    let annotator_id = req.annotator_name.trim().to_string();
    if annotator_id.is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "annotator_name must not be empty".into()));
    }
    app.store.register_annotator(&annotator_id)?;
    let snapshot = app.store.snapshot();
    let retained: HashMap<String, usize> = snapshot
        .aggregate_scores()
        .into_iter()
        .map(|s| (s.pair_id, s.n_valid))
        .collect();
    let answered = app.store.answered_by(&annotator_id);
    let queue = build_queue(
        &snapshot.pairs,
        &answered,
        &retained,
        app.config.trap_rate,
        session_seed(&annotator_id),
    );

    let session_id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session {
        annotator_id,
        created_at: Utc::now(),
        queue: queue.into(),
        presented_at: None,
    };
    tracing::info!(%session_id, annotator = %session.annotator_id, created_at = %session.created_at, pairs = session.queue.len(), "session opened");
    let total_pairs = session.queue.len();
    app.sessions.lock().unwrap_or_else(|p| p.into_inner()).insert(session_id.clone(), session);
    Ok(Json(SessionCreated { session_id, total_pairs }))
}

#[derive(Serialize)]
#[serde(untagged)]
enum NextPair {
    Pair { pair_id: String, gt_url: String, sr_url: String },
    Done { done: bool },
}

async fn next_pair(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<NextPair>> {
    let mut sessions = app.sessions.lock().unwrap_or_else(|p| p.into_inner());
    let session = sessions.get_mut(&id).ok_or_else(|| ApiError::not_found("unknown session"))?;
    // Another session of the same annotator may have answered queued pairs.
    let answered = app.store.answered_by(&session.annotator_id);
    while session.queue.front().is_some_and(|h| answered.contains(h)) {
        session.queue.pop_front();
        session.presented_at = None;
    }
    let Some(head) = session.queue.front() else {
        return Ok(Json(NextPair::Done { done: true }));
    };
    session.presented_at.get_or_insert_with(Utc::now);
    Ok(Json(NextPair::Pair {
        gt_url: format!("/images/{head}/gt"),
        sr_url: format!("/images/{head}/sr"),
        pair_id: head.clone(),
    }))
}

#[derive(Deserialize, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum YesNo {
    Yes,
    No,
}

#[derive(Deserialize)]
struct AnswerRequest {
    pair_id: String,
    answer: YesNo,
    latency_ms: u64,
}

#[derive(Serialize)]
struct AnswerAccepted {
    accepted: bool,
    remaining: usize,
}

async fn answer(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<AnswerRequest>,
) -> ApiResult<Json<AnswerAccepted>> {
    let event = {
        let sessions = app.sessions.lock().unwrap_or_else(|p| p.into_inner());
        let session = sessions.get(&id).ok_or_else(|| ApiError::not_found("unknown session"))?;
        if app.store.answered_by(&session.annotator_id).contains(&req.pair_id) {
            return Err(ApiError::conflict(format!("pair {} already answered", req.pair_id)));
        }
        if session.queue.front() != Some(&req.pair_id) {
            return Err(ApiError::conflict(format!("pair {} is not the current pair", req.pair_id)));
        }
        let now = Utc::now();
        AnnotationEvent {
            event_id: uuid::Uuid::new_v4().to_string(),
            annotator_id: session.annotator_id.clone(),
            pair_id: req.pair_id.clone(),
            answer: matches!(req.answer, YesNo::Yes),
            presented_at: session
                .presented_at
                .unwrap_or_else(|| now - chrono::Duration::milliseconds(req.latency_ms as i64)),
            latency_ms: req.latency_ms,
        }
    };

    // The append fsyncs; keep it off the async workers.
    let store_app = Arc::clone(&app);
    tokio::task::spawn_blocking(move || store_app.store.record_annotation(event))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;

    let mut sessions = app.sessions.lock().unwrap_or_else(|p| p.into_inner());
    let session = sessions.get_mut(&id).ok_or_else(|| ApiError::not_found("unknown session"))?;
    if session.queue.front() == Some(&req.pair_id) {
        session.queue.pop_front();
        session.presented_at = None;
    }
    Ok(Json(AnswerAccepted {
        accepted: true,
        remaining: session.queue.len(),
    }))
}

async fn progress(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let snapshot = app.store.snapshot();
    let scores = snapshot.aggregate_scores();
    let sessions = app.sessions.lock().unwrap_or_else(|p| p.into_inner()).len();
    Json(json!({
        "pairs": scores.len(),
        "final_pairs": scores.iter().filter(|s| s.is_final).count(),
        "annotators": snapshot.annotators.len(),
        "events": snapshot.events.len(),
        "sessions": sessions,
    }))
}

#[derive(Deserialize)]
struct ExportQuery {
    what: String,
}

async fn export(State(app): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    let token = headers.get(ADMIN_TOKEN_HEADER).and_then(|v| v.to_str().ok());
    if token != Some(app.config.admin_token.as_str()) {
        return Err(ApiError(StatusCode::UNAUTHORIZED, "bad admin token".into()));
    }
    let snapshot = app.store.snapshot();
    let body = match q.what.as_str() {
        "events" => jsonl::to_string(&snapshot.events),
        "scores" => jsonl::to_string(&snapshot.aggregate_scores()),
        "statuses" => jsonl::to_string(&snapshot.annotator_filter()),
        other => {
            return Err(ApiError(
                StatusCode::BAD_REQUEST,
                format!("unknown export {other:?}; expected events, scores or statuses"),
            ))
        }
    };
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn image(State(app): State<Arc<AppState>>, Path((pair_id, role)): Path<(String, String)>) -> ApiResult<Response> {
    let pair = app.store.pair(&pair_id).ok_or_else(|| ApiError::not_found("unknown pair"))?;
    let rel = match role.as_str() {
        "gt" => &pair.gt_path,
        "sr" => &pair.sr_path,
        _ => return Err(ApiError::not_found("role must be gt or sr")),
    };
    let path = app.image_path(rel);
    let bytes = tokio::fs::read(&path).await.map_err(|e| {
        tracing::warn!(path = %path.display(), error = %e, "image unavailable");
        ApiError::not_found("image unavailable")
    })?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn static_asset(State(app): State<Arc<AppState>>, uri: Uri) -> ApiResult<Response> {
    let Some(root) = &app.config.ui_dir else {
        return Err(ApiError::not_found("not found"));
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = FsPath::new(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(ApiError::not_found("not found"));
    }
    let path = root.join(rel);
    let bytes = tokio::fs::read(&path).await.map_err(|_| ApiError::not_found("not found"))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

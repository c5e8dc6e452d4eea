//! HTTP API for the human selection stage.
//!
//! Every JSON body carries `schema_version`, and every response (including
//! 204) carries the `x-schema-version` header.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use promptalign::curation::{CurationError, TaskStore};
use promptalign::util::now_ms;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA_HEADER: &str = "x-schema-version";

/// Milliseconds since the epoch; replaceable in tests.
pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<TaskStore>,
    pub clock: Clock,
}

impl AppState {
    pub fn new(store: Arc<TaskStore>) -> Self {
        Self {
            store,
            clock: Arc::new(now_ms),
        }
    }
}

fn body(status: StatusCode, mut value: Value) -> Response {
    if let Value::Object(map) = &mut value {
        map.insert("schema_version".into(), SCHEMA_VERSION.into());
    }
    (status, Json(value)).into_response()
}

struct ApiError(CurationError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            CurationError::TaskNotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            CurationError::AlreadyDecided(_) => (StatusCode::CONFLICT, "already_decided"),
            CurationError::LeaseExpired(_) => (StatusCode::GONE, "lease_expired"),
            CurationError::InvalidChoice { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_choice"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            log::error!("annotation api: {}", self.0);
        }
        body(status, json!({"error": {"code": code, "message": self.0.to_string()}}))
    }
}

async fn next_task(State(s): State<AppState>) -> Response {
    match s.store.next((s.clock)()) {
        Some(view) => body(StatusCode::OK, serde_json::to_value(view).expect("task view serializes")),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionBody {
    chosen_index: usize,
    #[serde(default)]
    lease_id: Option<String>,
    #[serde(default)]
    annotator_id: Option<String>,
}

async fn select(State(s): State<AppState>, Path(id): Path<String>, Json(b): Json<SelectionBody>) -> Response {
    let now = (s.clock)();
    match s
        .store
        .select(&id, b.chosen_index, b.lease_id.as_deref(), b.annotator_id.as_deref(), now)
    {
        Ok(t) => body(
            StatusCode::OK,
            json!({"task_id": t.id, "status": t.status, "chosen_index": t.chosen_index}),
        ),
        Err(e) => ApiError(e).into_response(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagBody {
    reason: String,
    #[serde(default)]
    annotator_id: Option<String>,
}

async fn flag(State(s): State<AppState>, Path(id): Path<String>, Json(b): Json<FlagBody>) -> Response {
    match s.store.flag(&id, &b.reason, b.annotator_id.as_deref(), (s.clock)()) {
        Ok(t) => body(StatusCode::OK, json!({"task_id": t.id, "status": t.status})),
        Err(e) => ApiError(e).into_response(),
    }
}

async fn stats(State(s): State<AppState>) -> Response {
    body(StatusCode::OK, serde_json::to_value(s.store.stats()).expect("stats serialize"))
}

fn content_type(name: &str) -> &'static str {
    match name.rsplit('.').next() {
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn image(State(s): State<AppState>, Path(name): Path<String>) -> Response {
    let Some(path) = s.store.image_path(&name) else {
        return ApiError(CurationError::TaskNotFound(name)).into_response();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&name))], Body::from(bytes)).into_response(),
        Err(_) => body(
            StatusCode::NOT_FOUND,
            json!({"error": {"code": "not_found", "message": format!("no image {name}")}}),
        ),
    }
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/tasks/{id}/selection", post(select))
        .route("/api/tasks/{id}/flag", post(flag))
        .route("/api/stats", get(stats))
        .route("/images/{name}", get(image))
        .with_state(state);
    if let Some(dir) = static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(axum::middleware::map_response(|mut r: Response| async move {
        r.headers_mut()
            .insert(SCHEMA_HEADER, HeaderValue::from(SCHEMA_VERSION));
        r
    }))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Serves until `shutdown` resolves, then flushes the selection journal.
pub async fn serve_until(
    listener: tokio::net::TcpListener,
    state: AppState,
    static_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let store = state.store.clone();
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(shutdown)
        .await?;
    store.flush().map_err(std::io::Error::other)?;
    log::info!("selection journal flushed ({} decisions)", store.journal_len());
    Ok(())
}

/// Binds `addr` and serves until Ctrl-C or SIGTERM.
pub fn serve(addr: SocketAddr, state: AppState, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("annotation server listening on http://{}", listener.local_addr()?);
        serve_until(listener, state, static_dir, shutdown_signal()).await
    })
}

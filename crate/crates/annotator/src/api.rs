//! HTTP JSON API over [`Store`].

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::store::{Choice, CreateRequest, SessionKind, Store, StoreError};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    /// Shared bearer token required on `/api` routes when set.
    pub token: Option<String>,
}

struct ApiError(StoreError);

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            StoreError::UnknownSession(_) => StatusCode::NOT_FOUND,
            StoreError::UnknownItem(_) => StatusCode::NOT_FOUND,
            StoreError::Closed(_) => StatusCode::CONFLICT,
            StoreError::BadChoice { .. } | StoreError::Invalid(_) => StatusCode::BAD_REQUEST,
            StoreError::Insufficient { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::Log { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn create(State(s): State<AppState>, Json(req): Json<CreateRequest>) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let session = s.store.create(&req)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": session.session_id, "total": session.items.len() })),
    ))
}

async fn list(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!(s.store.list()))
}

async fn next(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    Ok(Json(match s.store.next_item(&id)? {
        Some(item) => json!(item),
        None => json!({ "done": true }),
    }))
}

#[derive(Deserialize)]
struct JudgmentRequest {
    item_id: String,
    choice: Choice,
}

async fn judge(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<JudgmentRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    let remaining = s.store.submit(&id, &req.item_id, req.choice)?;
    Ok(Json(json!({ "ok": true, "remaining": remaining })))
}

/// Turing sessions report as JSON; labeling sessions export label JSONL.
async fn report(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = s.store.session(&id)?;
    Ok(match session.kind {
        SessionKind::Turing => Json(s.store.turing_report(&id)?).into_response(),
        SessionKind::Labeling => {
            let mut body = String::new();
            for row in s.store.labeling_export(&id)? {
                body.push_str(&serde_json::to_string(&row).expect("labels serialize"));
                body.push('\n');
            }
            ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
        }
    })
}

async fn require_token(State(s): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok {
            return (StatusCode::UNAUTHORIZED, Json(json!({ "error": "missing or wrong token" }))).into_response();
        }
    }
    next.run(req).await
}

/// API routes, plus static files from `static_dir` at `/` when given.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create).get(list))
        .route("/api/sessions/{id}/next", get(next))
        .route("/api/sessions/{id}/judgments", post(judge))
        .route("/api/sessions/{id}/report", get(report))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotator listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}

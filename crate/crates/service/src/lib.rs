//! JSON review API over a [`QaStore`].
//!
//! Every response body is either the persisted store value or an [`ApiError`].
//! Handlers never recompute metrics.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;
use trajaudit::miner::{hotspot_points, EventStatus, HotspotGrid};
use trajaudit::qa::{QaError, QaStore, QueueItem, ReviewRecord, ReviewSubmission};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
        }
    }
}

impl From<QaError> for ApiError {
    fn from(e: QaError) -> Self {
        let status = match &e {
            QaError::RoundNotFound(_) | QaError::EventNotFound(_) => StatusCode::NOT_FOUND,
            QaError::MissingFailureTag | QaError::InvalidKeepTag(_) => StatusCode::UNPROCESSABLE_ENTITY,
            QaError::ReadOnly => StatusCode::CONFLICT,
            QaError::InvalidRoundId(_) | QaError::RoundOrder { .. } | QaError::MissingTrack { .. } => {
                StatusCode::BAD_REQUEST
            }
            QaError::Format(_) | QaError::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_query", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResponse {
    pub item: QueueItem,
    pub status: EventStatus,
    pub history: Vec<ReviewRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionResponse {
    pub record_id: String,
    pub status: EventStatus,
}

#[derive(Debug, Clone, Deserialize)]
pub struct HotspotQuery {
    #[serde(default)]
    pub include_rejected: bool,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
}

fn default_cell_size() -> f64 {
    1.0
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn rounds(State(store): State<Arc<QaStore>>) -> impl IntoResponse {
    Json(store.rounds())
}

async fn queue(State(store): State<Arc<QaStore>>, Path(round_id): Path<String>) -> ApiResult<impl Serialize> {
    Ok(Json(store.queue(&round_id)?))
}

async fn case(State(store): State<Arc<QaStore>>, Path(event_id): Path<String>) -> ApiResult<CaseResponse> {
    let (item, status, history) = store.case(&event_id)?;
    Ok(Json(CaseResponse { item, status, history }))
}

async fn decision(
    State(store): State<Arc<QaStore>>,
    Path(event_id): Path<String>,
    body: Result<Json<ReviewSubmission>, JsonRejection>,
) -> ApiResult<DecisionResponse> {
    let Json(sub) = body?;
    let store2 = store.clone();
    let id = event_id.clone();
    let record = tokio::task::spawn_blocking(move || store2.submit_review(&id, sub))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(DecisionResponse {
        record_id: record.record_id,
        status: store.status(&event_id),
    }))
}

async fn summary(State(store): State<Arc<QaStore>>, Path(round_id): Path<String>) -> ApiResult<impl Serialize> {
    Ok(Json(store.round_summary(&round_id)?))
}

async fn hotspot(
    State(store): State<Arc<QaStore>>,
    query: Result<Query<HotspotQuery>, QueryRejection>,
) -> ApiResult<HotspotGrid> {
    let Query(q) = query?;
    if !(q.cell_size.is_finite() && q.cell_size > 0.0) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_query",
            format!("cell_size must be positive and finite, got {}", q.cell_size),
        ));
    }
    let items = store.latest_items();
    let points = items
        .iter()
        .filter(|i| q.include_rejected || matches!(i.status, EventStatus::Kept | EventStatus::Pending))
        .map(|i| i.location);
    Ok(Json(hotspot_points(points, q.cell_size)))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

/// API routes, with an optional static asset directory served at `/`.
pub fn router(store: Arc<QaStore>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/rounds", get(rounds))
        .route("/api/rounds/{id}/queue", get(queue))
        .route("/api/rounds/{id}/summary", get(summary))
        .route("/api/cases/{event_id}", get(case))
        .route("/api/cases/{event_id}/decision", post(decision))
        .route("/api/hotspot", get(hotspot))
        .route("/api/{*rest}", get(not_found).post(not_found))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub store: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub read_only: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] QaError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let mode = if cfg.read_only {
        trajaudit::qa::OpenMode::ReadOnly
    } else {
        trajaudit::qa::OpenMode::ReadWrite
    };
    let store = Arc::new(QaStore::open(cfg.store.clone(), mode)?);
    let app = router(store, cfg.static_dir);
    let listener = tokio::net::TcpListener::bind(cfg.addr)
        .await
        .map_err(|source| ServiceError::Bind { addr: cfg.addr, source })?;
    log::info!("listening on {}", cfg.addr);
    axum::serve(listener, app).await.map_err(ServiceError::Serve)
}

//! JSON API over an [`AnnotationStore`].

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ptg_core::selection::SelectionRound;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::info;

use crate::error::ServiceError;
use crate::state::{AnnotationRecord, PairStatus, RoundState};
use crate::store::AnnotationStore;

/// Header consulted when a submission body carries no annotator.
pub const ANNOTATOR_HEADER: &str = "x-annotator-id";
const NDJSON: &str = "application/x-ndjson";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<AnnotationStore>,
    pub media_root: Option<PathBuf>,
    pub ui_root: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownRound(_) => StatusCode::NOT_FOUND,
            ServiceError::DuplicateRound(_)
            | ServiceError::ReadOnly(_)
            | ServiceError::Incomplete { .. }
            | ServiceError::NotExported(_) => StatusCode::CONFLICT,
            ServiceError::InvalidRound(_)
            | ServiceError::UnknownPair { .. }
            | ServiceError::EmptyText
            | ServiceError::MissingAnnotator => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::CorruptLog { .. } | ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs a store mutation off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Progress {
    pub annotated: usize,
    pub total: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RoundView {
    pub round: SelectionRound,
    pub progress: Progress,
    pub annotations: Vec<AnnotationRecord>,
    pub revisions: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairView {
    pub pair_id: String,
    #[serde(rename = "ref")]
    pub ref_image_id: String,
    #[serde(rename = "tgt")]
    pub target_image_id: String,
    pub ref_url: String,
    pub tgt_url: String,
    pub category: String,
    pub score: f64,
    pub status: PairStatus,
    pub annotation: Option<AnnotationRecord>,
}

fn media_url(image_id: &str) -> String {
    format!("/media/{image_id}")
}

fn pair_views(state: &RoundState) -> Vec<PairView> {
    state
        .round
        .chosen_ids()
        .map(|id| {
            let info = &state.round.pairs[id];
            PairView {
                pair_id: id.to_string(),
                ref_image_id: info.ref_image_id.clone(),
                target_image_id: info.target_image_id.clone(),
                ref_url: media_url(&info.ref_image_id),
                tgt_url: media_url(&info.target_image_id),
                category: info.category.clone(),
                score: info.score,
                status: state.status_of(id),
                annotation: state.annotations.get(id).cloned(),
            }
        })
        .collect()
}

async fn create_round(
    State(app): State<AppState>,
    body: Result<Json<SelectionRound>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let Json(round) = body?;
    let store = app.store.clone();
    let id = blocking(move || store.create_round(round)).await?;
    info!(round_id = %id, "round created");
    Ok((StatusCode::CREATED, Json(json!({"round_id": id, "status": "annotating"}))))
}

async fn get_round(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<RoundView>> {
    let snapshot = app.store.snapshot();
    let state = snapshot.round(&id)?;
    Ok(Json(RoundView {
        round: state.round.clone(),
        progress: Progress {
            annotated: state.annotations.len(),
            total: state.round.chosen_count(),
        },
        annotations: state.annotations.values().cloned().collect(),
        revisions: state.history.len() - state.annotations.len(),
    }))
}

#[derive(Debug, Deserialize)]
struct PairsQuery {
    status: Option<String>,
}

async fn list_pairs(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<PairsQuery>,
) -> ApiResult<Json<Vec<PairView>>> {
    let filter = match query.status.as_deref() {
        None | Some("all") => None,
        Some("pending") => Some(PairStatus::Pending),
        Some("annotated") => Some(PairStatus::Annotated),
        Some(other) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "bad_request",
                format!("status must be pending, annotated or all, got {other:?}"),
            ))
        }
    };
    let snapshot = app.store.snapshot();
    let views = pair_views(snapshot.round(&id)?)
        .into_iter()
        .filter(|v| filter.is_none_or(|s| v.status == s))
        .collect();
    Ok(Json(views))
}

#[derive(Debug, Deserialize)]
struct AnnotationBody {
    text: String,
    #[serde(default)]
    annotator: Option<String>,
    #[serde(default)]
    client_nonce: Option<String>,
}

async fn submit_annotation(
    State(app): State<AppState>,
    UrlPath((round_id, pair_id)): UrlPath<(String, String)>,
    headers: HeaderMap,
    body: Result<Json<AnnotationBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<AnnotationRecord>)> {
    let Json(body) = body?;
    let annotator = body
        .annotator
        .filter(|a| !a.trim().is_empty())
        .or_else(|| {
            headers
                .get(ANNOTATOR_HEADER)
                .and_then(|v| v.to_str().ok())
                .filter(|a| !a.trim().is_empty())
                .map(str::to_string)
        })
        .ok_or(ServiceError::MissingAnnotator)?;
    let store = app.store.clone();
    let submission =
        blocking(move || {
        store.submit_annotation(&round_id, &pair_id, &body.text, &annotator, body.client_nonce.as_deref())
    })
    .await?;
    let status = if submission.revised || submission.replayed {
        StatusCode::OK
    } else {
        StatusCode::CREATED
    };
    Ok((status, Json(submission.record)))
}

fn ndjson(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, NDJSON)], bytes).into_response()
}

async fn export_round(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let store = app.store.clone();
    let bytes = blocking(move || store.export_round(&id)).await?;
    Ok(ndjson(bytes))
}

async fn get_export(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    Ok(ndjson(app.store.exported_manifest(&id)?))
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

/// Joins `rel` under `root`, refusing anything that could climb out of it.
fn contained(root: &Path, rel: &str) -> Option<PathBuf> {
    let mut out = root.to_path_buf();
    for part in rel.split('/') {
        if part.is_empty() || part == "." || part == ".." || part.contains('\\') || part.contains('\0') {
            return None;
        }
        out.push(part);
    }
    Some(out)
}

async fn read_static(path: &Path) -> ApiResult<Response> {
    match tokio::fs::read(path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, content_type(path))], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::not_found("no such file")),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string())),
    }
}

async fn media(State(app): State<AppState>, UrlPath(image_id): UrlPath<String>) -> ApiResult<Response> {
    let root = app
        .media_root
        .as_deref()
        .ok_or_else(|| ApiError::not_found("no media directory configured"))?;
    if image_id.contains('/') {
        return Err(ApiError::not_found(format!("no image {image_id:?}")));
    }
    let path = contained(root, &image_id).ok_or_else(|| ApiError::not_found(format!("no image {image_id:?}")))?;
    read_static(&path).await
}

async fn ui(State(app): State<AppState>, rest: Option<UrlPath<String>>) -> ApiResult<Response> {
    let root = app
        .ui_root
        .as_deref()
        .ok_or_else(|| ApiError::not_found("no UI bundle configured"))?;
    let rel = rest.map(|UrlPath(r)| r).filter(|r| !r.is_empty());
    let rel = rel.as_deref().unwrap_or("index.html");
    let path = contained(root, rel).ok_or_else(|| ApiError::not_found(format!("no file {rel:?}")))?;
    read_static(&path).await
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/rounds", post(create_round))
        .route("/rounds/{id}", get(get_round))
        .route("/rounds/{id}/pairs", get(list_pairs))
        .route("/rounds/{id}/pairs/{pair_id}/annotation", post(submit_annotation))
        .route("/rounds/{id}/export", post(export_round).get(get_export))
        .route("/media/{image_id}", get(media))
        .route("/ui", get(ui))
        .route("/ui/", get(ui))
        .route("/ui/{*path}", get(ui))
        .fallback(fallback)
        .with_state(state)
}

/// Binds `addr` and serves until the process stops.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(state)).await
}

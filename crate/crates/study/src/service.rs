//! HTTP JSON API over a [`Store`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::error::{StudyError, StudyResult};
use crate::model::{RatingInput, StudyRequest};
use crate::report::{parse_thresholds, BoundaryRule};
use crate::store::Store;

pub type SharedStore = Arc<Mutex<Store>>;

pub struct ApiError(StudyError);

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            StudyError::NotFound(_) => StatusCode::NOT_FOUND,
            StudyError::Validation(_) | StudyError::Contract(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn lock(store: &SharedStore) -> std::sync::MutexGuard<'_, Store> {
    store.lock().unwrap_or_else(|p| p.into_inner())
}

async fn create_study(State(store): State<SharedStore>, Json(req): Json<StudyRequest>) -> ApiResult<Response> {
    let study = lock(&store).create_study(&req, now())?;
    Ok((StatusCode::CREATED, Json(json!({ "study_id": study.id }))).into_response())
}

#[derive(Deserialize)]
struct SessionQuery {
    rater: Option<String>,
}

async fn session(
    State(store): State<SharedStore>,
    Path(id): Path<String>,
    Query(q): Query<SessionQuery>,
) -> ApiResult<Response> {
    let rater = q
        .rater
        .filter(|r| !r.trim().is_empty())
        .ok_or_else(|| StudyError::Validation("`rater` query parameter is required".into()))?;
    let payload = lock(&store).session(&id, &rater)?;
    Ok(Json(payload).into_response())
}

async fn image(State(store): State<SharedStore>, Path(image_id): Path<String>) -> ApiResult<Response> {
    let path = lock(&store).image_file(&image_id)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|source| StudyError::Io { path: path.clone(), source })?;
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "image/png",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn submit(
    State(store): State<SharedStore>,
    Path(id): Path<String>,
    Json(input): Json<RatingInput>,
) -> ApiResult<Response> {
    let outcome = lock(&store).submit(&id, &input, now())?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "accepted": true, "recorded": outcome.recorded })),
    )
        .into_response())
}

#[derive(Deserialize)]
struct ReportQuery {
    thresholds: Option<String>,
    rule: Option<BoundaryRule>,
}

async fn report(
    State(store): State<SharedStore>,
    Path(id): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    let thresholds = parse_thresholds(q.thresholds.as_deref().unwrap_or(""))?;
    let report = lock(&store).report(&id, &thresholds, q.rule.unwrap_or_default())?;
    Ok(Json(report).into_response())
}

pub fn router(store: SharedStore) -> Router {
    Router::new()
        .route("/api/studies", post(create_study))
        .route("/api/studies/{id}/session", get(session))
        .route("/api/studies/{id}/ratings", post(submit))
        .route("/api/studies/{id}/report", get(report))
        .route("/api/images/{image_id}", get(image))
        .with_state(store)
}

/// Serves the API until Ctrl-C.
pub async fn serve(store_dir: PathBuf, addr: SocketAddr) -> StudyResult<()> {
    let store = Arc::new(Mutex::new(Store::open(store_dir)?));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| StudyError::Io { path: addr.to_string().into(), source })?;
    log::info!("study service listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| StudyError::Io { path: addr.to_string().into(), source })
}

/// [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(store_dir: PathBuf, addr: SocketAddr) -> StudyResult<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|source| StudyError::Io {
        path: "tokio runtime".into(),
        source,
    })?;
    rt.block_on(serve(store_dir, addr))
}

//! JSON/PNG routes over [`Service`].

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use crowdenhance_core::imaging::{decode_image, encode_png};
use serde::Deserialize;
use tower_http::services::ServeDir;

use crate::error::{ServiceError, ServiceResult};
use crate::state::{Service, SubmitOutcome};
use crate::store::{INPUT_FILE, PARAMS_CSV, RESULT_PNG, TRACE_CSV};

/// Uploads larger than this are refused.
pub const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;
const DEFAULT_PREVIEW_EDGE: usize = 512;

type Shared = Arc<Service>;

async fn blocking<T, F>(f: F) -> ServiceResult<T>
where
    F: FnOnce() -> ServiceResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker task failed: {e}")))?
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn csv(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], bytes).into_response()
}

async fn create_session(State(svc): State<Shared>, mut form: Multipart) -> ServiceResult<Response> {
    let mut image: Option<Bytes> = None;
    let mut config: Option<String> = None;
    let bad = |e: axum::extract::multipart::MultipartError| ServiceError::BadRequest(format!("malformed upload: {e}"));
    while let Some(field) = form.next_field().await.map_err(bad)? {
        match field.name() {
            Some("image") => image = Some(field.bytes().await.map_err(bad)?),
            Some("config") => config = Some(field.text().await.map_err(bad)?),
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ServiceError::BadRequest("missing `image` field".into()))?;
    let detail = blocking(move || svc.create_session(&image, config.as_deref())).await?;
    Ok(Json(detail).into_response())
}

async fn list_sessions(State(svc): State<Shared>) -> Response {
    Json(svc.list_sessions()).into_response()
}

async fn get_session(State(svc): State<Shared>, Path(id): Path<String>) -> ServiceResult<Response> {
    Ok(Json(svc.session(&id)?).into_response())
}

async fn get_result(State(svc): State<Shared>, Path(id): Path<String>) -> ServiceResult<Response> {
    Ok(Json(svc.result(&id)?).into_response())
}

async fn get_artifact(State(svc): State<Shared>, Path((id, name)): Path<(String, String)>) -> ServiceResult<Response> {
    match name.as_str() {
        RESULT_PNG => Ok(png(svc.artifact(&id, RESULT_PNG)?)),
        PARAMS_CSV | TRACE_CSV => Ok(csv(svc.artifact(&id, &name)?)),
        "input.png" => {
            let raw = svc.artifact(&id, INPUT_FILE)?;
            let encoded = blocking(move || Ok(encode_png(&decode_image(&raw)?))).await?;
            Ok(png(encoded))
        }
        _ => Err(ServiceError::NotFound(format!("no artifact named {name}"))),
    }
}

#[derive(Debug, Deserialize)]
struct PreviewQuery {
    alpha: f64,
    #[serde(default)]
    reversed: bool,
    max_edge: Option<usize>,
}

async fn session_preview(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<PreviewQuery>,
) -> ServiceResult<Response> {
    let edge = q.max_edge.unwrap_or(DEFAULT_PREVIEW_EDGE);
    Ok(png(blocking(move || svc.preview(&id, q.alpha, q.reversed, edge)).await?))
}

async fn check_preview(State(svc): State<Shared>, Query(q): Query<PreviewQuery>) -> ServiceResult<Response> {
    let edge = q.max_edge.unwrap_or(DEFAULT_PREVIEW_EDGE);
    Ok(png(blocking(move || svc.check_preview(q.alpha, q.reversed, edge)).await?))
}

#[derive(Debug, Deserialize)]
struct WorkerQuery {
    worker: String,
}

async fn get_microtask(State(svc): State<Shared>, Query(q): Query<WorkerQuery>) -> ServiceResult<Response> {
    Ok(Json(blocking(move || svc.assign(&q.worker)).await?).into_response())
}

async fn get_microtask_by_id(State(svc): State<Shared>, Path(id): Path<String>) -> ServiceResult<Response> {
    Ok(Json(svc.microtask(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
pub struct SubmitRequest {
    pub worker: String,
    pub microtask_id: String,
    /// Raw slider positions, one per slot in assignment order.
    pub alphas: Vec<f64>,
}

async fn post_response(
    State(svc): State<Shared>,
    body: Result<Json<SubmitRequest>, axum::extract::rejection::JsonRejection>,
) -> ServiceResult<Json<SubmitOutcome>> {
    let Json(req) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let outcome = blocking(move || svc.submit(&req.worker, &req.microtask_id, &req.alphas)).await?;
    Ok(Json(outcome))
}

/// Builds the router; `static_dir`, if given, is served for unmatched paths.
pub fn router(service: Arc<Service>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/preview", get(session_preview))
        .route("/sessions/{id}/result", get(get_result))
        .route("/sessions/{id}/{artifact}", get(get_artifact))
        .route("/check/preview", get(check_preview))
        .route("/microtask", get(get_microtask))
        .route("/microtasks/{id}", get(get_microtask_by_id))
        .route("/responses", post(post_response))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

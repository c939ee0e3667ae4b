//! HTTP surface, versioned under `/api/v1`.

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower_http::cors::CorsLayer;

use crate::store::{BUNDLE_FILE, DOCUMENT_FILE, REPORT_FILE};
use crate::{JobRecord, JobStatus, Service, SubmitError};

/// Largest accepted request body: 5 MiB.
pub const MAX_BODY_BYTES: usize = 5 * 1024 * 1024;

const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 500;

/// The JSON error envelope `{code, message, details}`.
#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"code": self.code, "message": self.message, "details": self.details});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn json_bytes(bytes: Vec<u8>) -> Response {
    (
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        bytes,
    )
        .into_response()
}

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/api/v1/simulations", post(submit))
        .route("/api/v1/jobs/{id}", get(job))
        .route("/api/v1/jobs/{id}/results", get(results))
        .route("/api/v1/experiments", get(experiments))
        .route("/api/v1/experiments/{id}", get(experiment))
        .route("/api/v1/experiments/{id}/download", get(download))
        .route("/api/v1/health", get(health))
        .route("/api/v1/roles", get(roles))
        .fallback(|| async { ApiError::not_found("route") })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(CorsLayer::permissive())
        .with_state(service)
}

async fn submit(
    State(service): State<Service>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let body = body.map_err(|rejection| {
        if rejection.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                "payload_too_large",
                format!("request body exceeds {MAX_BODY_BYTES} bytes"),
            )
        } else {
            ApiError::new(rejection.status(), "bad_request", rejection.body_text())
        }
    })?;
    let worker = service.clone();
    let submitted = tokio::task::spawn_blocking(move || worker.submit(&body))
        .await
        .map_err(ApiError::internal)?;
    match submitted {
        Ok(job) => Ok((
            StatusCode::ACCEPTED,
            Json(json!({"job_id": job.job_id, "status": job.status})),
        )
            .into_response()),
        Err(SubmitError::Invalid(errors)) => Err(ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: "invalid_document",
            message: format!("document has {} validation error(s)", errors.len()),
            details: json!({ "errors": errors }),
        }),
        Err(SubmitError::Io(e)) => Err(ApiError::internal(e)),
    }
}

fn find(service: &Service, id: &str) -> ApiResult<JobRecord> {
    service.job(id).ok_or_else(|| ApiError::not_found("job"))
}

async fn job(State(service): State<Service>, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    find(&service, &id).map(Json)
}

async fn results(State(service): State<Service>, Path(id): Path<String>) -> ApiResult<Response> {
    let job = find(&service, &id)?;
    match job.status {
        JobStatus::Queued | JobStatus::Running => Err(ApiError {
            details: json!({"status": job.status}),
            ..ApiError::new(StatusCode::CONFLICT, "not_finished", "job has not finished")
        }),
        JobStatus::Succeeded => service
            .read_artifact(&id, REPORT_FILE)
            .map(json_bytes)
            .map_err(ApiError::internal),
        JobStatus::Failed => Ok(Json(json!({
            "job_id": job.job_id,
            "status": job.status,
            "error": job.error,
        }))
        .into_response()),
    }
}

#[derive(Debug, Deserialize)]
struct Page {
    limit: Option<usize>,
    offset: Option<usize>,
}

fn summary(job: &JobRecord) -> Value {
    json!({
        "experiment_id": job.job_id,
        "name": job.name,
        "document_hash": job.document_hash,
        "status": job.status,
        "submitted_at": job.submitted_at,
        "finished_at": job.finished_at,
        "seeds": job.seeds,
    })
}

async fn experiments(State(service): State<Service>, Query(page): Query<Page>) -> Json<Value> {
    let all = service.experiments();
    let limit = page.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let offset = page.offset.unwrap_or(0);
    let items: Vec<Value> = all.iter().skip(offset).take(limit).map(summary).collect();
    Json(json!({"items": items, "total": all.len(), "limit": limit, "offset": offset}))
}

fn terminal(service: &Service, id: &str) -> ApiResult<JobRecord> {
    service
        .job(id)
        .filter(|j| j.status.is_terminal())
        .ok_or_else(|| ApiError::not_found("experiment"))
}

async fn experiment(State(service): State<Service>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let job = terminal(&service, &id)?;
    let document: Value = service
        .read_artifact(&id, DOCUMENT_FILE)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or(Value::Null);
    let report: Value = service
        .read_artifact(&id, REPORT_FILE)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or(Value::Null);
    Ok(Json(json!({
        "experiment_id": job.job_id,
        "job": job,
        "document": document,
        "report": report,
    })))
}

async fn download(State(service): State<Service>, Path(id): Path<String>) -> ApiResult<Response> {
    let job = terminal(&service, &id)?;
    let bytes = service.read_artifact(&id, BUNDLE_FILE).map_err(|_| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("experiment {id} has no artifact ({})", job.error.unwrap_or_default()),
        )
    })?;
    let digest = base64::engine::general_purpose::STANDARD.encode(Sha256::digest(&bytes));
    let disposition = format!("attachment; filename=\"{id}.qnbundle.json\"");
    Ok((
        [
            (header::CONTENT_TYPE, "application/json".to_string()),
            (header::HeaderName::from_static("content-digest"), format!("sha-256=:{digest}:")),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}

async fn health(State(service): State<Service>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "version": qndk_core::VERSION,
        "queue_depth": service.queue_depth(),
    }))
}

async fn roles(State(service): State<Service>) -> Json<Value> {
    Json(json!({ "roles": service.toolkit().roles.schemas() }))
}

//! HTTP routes.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use dbox_core::steptree::{NodeId, TreeError};
use serde::Deserialize;
use serde_json::json;

use crate::events::export_ndjson;
use crate::session::{ServiceError, SessionService, TreeOp};

pub type AppState = Arc<SessionService>;

pub fn router(service: AppState) -> Router {
    Router::new()
        .route("/problems/{id}", get(get_problem))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/check-step-tree", post(check_step_tree))
        .route("/sessions/{id}/from-editor", post(from_editor))
        .route("/sessions/{id}/copy-to-comments", post(copy_to_comments))
        .route("/sessions/{id}/check-match", post(check_match))
        .route("/sessions/{id}/hint", post(hint))
        .route("/sessions/{id}/run", post(run))
        .route("/sessions/{id}/code", put(put_code))
        .route("/sessions/{id}/tree", put(put_tree))
        .route("/sessions/{id}/events", get(events))
        .with_state(service)
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(error: ServiceError) -> Self {
        ApiError(error)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rejection: JsonRejection) -> Self {
        ApiError(ServiceError::BadRequest(rejection.body_text()))
    }
}

pub fn status_of(error: &ServiceError) -> StatusCode {
    match error {
        ServiceError::UnknownProblem(_) | ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
        ServiceError::Busy | ServiceError::Stale(_) | ServiceError::Comments(_) => StatusCode::CONFLICT,
        ServiceError::RateLimited { .. } => StatusCode::TOO_MANY_REQUESTS,
        ServiceError::EmptyCode | ServiceError::BadRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
        ServiceError::Tree(e) => match e {
            TreeError::UnknownNode(_) | TreeError::UnknownParent(_) => StatusCode::NOT_FOUND,
            TreeError::DepthLimitExceeded(_)
            | TreeError::NodeLimitExceeded(_)
            | TreeError::InvalidIndex { .. }
            | TreeError::InvalidCount
            | TreeError::CycleCreated => StatusCode::UNPROCESSABLE_ENTITY,
            // only reachable through a provider answer the engine could not apply
            TreeError::UnknownMatchedId(_) | TreeError::StructureFrozen | TreeError::StatusKindMismatch => {
                StatusCode::BAD_GATEWAY
            }
            _ => StatusCode::CONFLICT,
        },
        ServiceError::Provider { kind: "timeout", .. } => StatusCode::GATEWAY_TIMEOUT,
        ServiceError::Provider { .. } => StatusCode::BAD_GATEWAY,
        ServiceError::Runner(_) => StatusCode::SERVICE_UNAVAILABLE,
        ServiceError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_of(&self.0);
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        let mut body = json!({ "kind": self.0.kind(), "message": self.0.to_string() });
        let mut retry_after = None;
        match &self.0 {
            ServiceError::Provider { anomaly_id, .. } => body["anomalyId"] = json!(anomaly_id),
            ServiceError::Stale(anomaly) => body["anomaly"] = json!(anomaly),
            ServiceError::RateLimited { retry_after_ms, .. } => {
                body["retryAfterMs"] = json!(retry_after_ms);
                retry_after = Some(retry_after_ms.div_ceil(1000));
            }
            _ => {}
        }
        let mut response = (status, Json(json!({ "error": body }))).into_response();
        if let Some(seconds) = retry_after {
            response.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(seconds));
        }
        response
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct CreateSession {
    problem_id: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct HintRequest {
    node_id: NodeId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CodeUpdate {
    code: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeEdits {
    ops: Vec<TreeOp>,
}

#[derive(Deserialize)]
struct EventsQuery {
    format: Option<String>,
}

async fn get_problem(State(svc): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.problem(&id)?).into_response())
}

async fn create_session(
    State(svc): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(body) = body?;
    let view = svc.create_session(&body.problem_id).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(svc): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.session(&id).await?).into_response())
}

async fn check_step_tree(State(svc): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.check_step_tree(&id).await?).into_response())
}

async fn from_editor(State(svc): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.from_editor(&id).await?).into_response())
}

async fn copy_to_comments(State(svc): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.copy_to_comments(&id).await?).into_response())
}

async fn check_match(State(svc): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.check_match(&id).await?).into_response())
}

async fn hint(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<HintRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(body) = body?;
    Ok(Json(svc.hint(&id, &body.node_id).await?).into_response())
}

async fn run(State(svc): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.run(&id).await?).into_response())
}

async fn put_code(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<CodeUpdate>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(body) = body?;
    Ok(Json(svc.put_code(&id, body.code).await?).into_response())
}

async fn put_tree(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<TreeEdits>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(body) = body?;
    Ok(Json(svc.edit_tree(&id, body.ops).await?).into_response())
}

async fn events(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<EventsQuery>,
) -> ApiResult<Response> {
    let events = svc.events(&id).await?;
    match query.format.as_deref() {
        None | Some("json") => Ok(Json(events).into_response()),
        Some("ndjson") => Ok((
            [(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"))],
            export_ndjson(&events),
        )
            .into_response()),
        Some(other) => Err(ServiceError::BadRequest(format!("unknown export format {other:?}")).into()),
    }
}

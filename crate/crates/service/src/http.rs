use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use slideloc_core::summarizer::{Outline, SummaryManifest};

use crate::model::{Decision, OutlineOp, Stage};
use crate::service::{ExportFormat, NewVideo, Service};
use crate::ServiceError;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::VersionConflict { .. } => (StatusCode::CONFLICT, "version_conflict"),
            ServiceError::WrongStage { .. } => (StatusCode::CONFLICT, "wrong_stage"),
            ServiceError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ServiceError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "store"),
        };
        (status, Json(json!({ "error": code, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<Service>>;

/// Runs a store-touching call off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Store(e.to_string())))?
        .map_err(ApiError)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VideoBody {
    pub manifest: SummaryManifest,
    pub outline: Outline,
    /// Base64 of each keyframe's binary PGM bytes.
    pub keyframes: Vec<String>,
}

async fn post_video(State(svc): Shared, Json(body): Json<VideoBody>) -> ApiResult<impl IntoResponse> {
    let images = body
        .keyframes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            base64::engine::general_purpose::STANDARD
                .decode(b)
                .map_err(|e| ServiceError::Invalid(format!("keyframe {i}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let video = NewVideo {
        manifest: body.manifest,
        outline: body.outline,
        images,
    };
    let id = blocking(move || svc.register_video(video)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn get_summary(State(svc): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let v = blocking(move || svc.video(&id)).await?;
    Ok(Json(json!({
        "id": v.id,
        "manifest": v.manifest,
        "outline": v.outline,
        "keyframe_count": v.keyframes.len(),
    })))
}

async fn get_keyframe(State(svc): Shared, Path((id, k)): Path<(String, usize)>) -> ApiResult<impl IntoResponse> {
    let bytes = blocking(move || svc.keyframe_image(&id, k)).await?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-graymap")], bytes))
}

#[derive(Deserialize)]
struct NewSession {
    video_id: String,
}

async fn post_session(State(svc): Shared, Json(body): Json<NewSession>) -> ApiResult<impl IntoResponse> {
    let s = blocking(move || svc.create_session(&body.video_id)).await?;
    Ok((StatusCode::CREATED, Json(s)))
}

async fn get_session(State(svc): Shared, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.session(&id)).await?))
}

#[derive(Deserialize)]
struct SelectionBody {
    keyframe: usize,
    decision: Decision,
    expected_version: u64,
}

async fn post_selection(State(svc): Shared, Path(id): Path<String>, Json(b): Json<SelectionBody>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.apply_selection(&id, b.keyframe, b.decision, b.expected_version)).await?))
}

#[derive(Deserialize)]
struct OutlineBody {
    #[serde(flatten)]
    op: OutlineOp,
    expected_version: u64,
}

async fn post_outline(State(svc): Shared, Path(id): Path<String>, Json(b): Json<OutlineBody>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.apply_outline_op(&id, &b.op, b.expected_version)).await?))
}

#[derive(Deserialize)]
struct BlockBody {
    node: String,
    text: String,
    expected_version: u64,
}

async fn post_block(State(svc): Shared, Path(id): Path<String>, Json(b): Json<BlockBody>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.set_summary_block(&id, &b.node, &b.text, b.expected_version)).await?))
}

#[derive(Deserialize)]
struct StageBody {
    stage: Stage,
    expected_version: u64,
}

async fn post_stage(State(svc): Shared, Path(id): Path<String>, Json(b): Json<StageBody>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.set_stage(&id, b.stage, b.expected_version)).await?))
}

#[derive(Deserialize)]
struct EventBody {
    kind: String,
    #[serde(default)]
    payload: Value,
}

async fn post_event(State(svc): Shared, Path(id): Path<String>, Json(b): Json<EventBody>) -> ApiResult<impl IntoResponse> {
    let e = blocking(move || svc.record_event(&id, &b.kind, b.payload)).await?;
    Ok((StatusCode::CREATED, Json(e)))
}

#[derive(Deserialize)]
struct EventsQuery {
    format: Option<ExportFormat>,
}

async fn get_events(State(svc): Shared, Path(id): Path<String>, Query(q): Query<EventsQuery>) -> ApiResult<Response> {
    Ok(match q.format {
        None => Json(blocking(move || svc.list_events(&id)).await?).into_response(),
        Some(f) => {
            let body = blocking(move || svc.export_events(&id, f)).await?;
            let ctype = match f {
                ExportFormat::Jsonl => "application/x-ndjson",
                ExportFormat::Csv => "text/csv; charset=utf-8",
            };
            ([(header::CONTENT_TYPE, ctype)], body).into_response()
        }
    })
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/videos", post(post_video))
        .route("/videos/{id}/summary", get(get_summary))
        .route("/videos/{id}/keyframes/{k}", get(get_keyframe))
        .route("/sessions", post(post_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/selection", post(post_selection))
        .route("/sessions/{id}/outline", post(post_outline))
        .route("/sessions/{id}/summary-block", post(post_block))
        .route("/sessions/{id}/stage", post(post_stage))
        .route("/sessions/{id}/events", post(post_event).get(get_events))
        .with_state(service)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, service: Arc<Service>) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

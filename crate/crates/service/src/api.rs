//! HTTP routes.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use foresearch_core::QaSample;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower_http::trace::TraceLayer;

use crate::app::{App, AppError, EvalRequest, IngestRequest, QueryRequest};
use crate::jobs::{Job, JobKind};
use crate::review::ReviewError;

pub const OPENAPI: &str = include_str!("../assets/openapi.json");

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1}))).into_response()
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        let status = match &e {
            AppError::Input(_) => StatusCode::BAD_REQUEST,
            AppError::NotFound(_) => StatusCode::NOT_FOUND,
            AppError::Conflict(_) => StatusCode::CONFLICT,
            AppError::Backend(_) => StatusCode::SERVICE_UNAVAILABLE,
            AppError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::Invalid(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

#[derive(Clone)]
pub struct ApiState {
    pub app: Arc<App>,
    ingest_slots: Arc<Semaphore>,
    eval_slots: Arc<Semaphore>,
}

impl ApiState {
    pub fn new(app: Arc<App>) -> Self {
        Self {
            ingest_slots: Arc::new(Semaphore::new(app.cfg.workers.ingest)),
            eval_slots: Arc::new(Semaphore::new(app.cfg.workers.eval)),
            app,
        }
    }

    /// Runs a job in the background within its kind's worker limit.
    pub fn spawn_job(&self, job: &Job) {
        let slots = match job.kind {
            JobKind::Ingest => self.ingest_slots.clone(),
            JobKind::Eval => self.eval_slots.clone(),
        };
        let app = self.app.clone();
        let id = job.id.clone();
        tokio::spawn(async move {
            let _permit = slots.acquire_owned().await.expect("semaphore open");
            let run = tokio::task::spawn_blocking(move || app.run_job(&id));
            if let Ok(Err(e)) = run.await {
                tracing::warn!(error = %e, "job ended with an error");
            }
        });
    }

    /// Picks up jobs an earlier process left unfinished.
    pub fn resume_unfinished(&self) -> usize {
        let jobs = self.app.jobs.unfinished();
        for j in &jobs {
            tracing::info!(job = %j.id, kind = ?j.kind, "resuming job");
            self.spawn_job(j);
        }
        jobs.len()
    }
}

/// A job without its (possibly large) input.
fn job_view(job: &Job) -> Value {
    let mut v = serde_json::to_value(job).expect("job serializes");
    if let Some(o) = v.as_object_mut() {
        o.remove("input");
    }
    v
}

async fn require_token(State(state): State<ApiState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.app.cfg.auth_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or wrong bearer token".into()).into_response();
        }
    }
    next.run(req).await
}

async fn ingest(State(s): State<ApiState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: IngestRequest = parse(&body)?;
    let app = s.app.clone();
    let (job, fresh) = blocking(move || app.submit_ingest(&req)).await??;
    if fresh {
        s.spawn_job(&job);
    }
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": job.id, "status": job.status}))))
}

async fn get_job(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let job = s
        .app
        .jobs
        .get(&id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown job `{id}`")))?;
    Ok(Json(job_view(&job)))
}

async fn list_jobs(State(s): State<ApiState>) -> Json<Value> {
    Json(json!({"jobs": s.app.jobs.list().iter().map(job_view).collect::<Vec<_>>()}))
}

async fn list_videos(State(s): State<ApiState>) -> Json<Value> {
    Json(json!({"videos": s.app.registry.list()}))
}

async fn video_clips(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let clips = s.app.clips_of(&id)?;
    Ok(Json(json!({"video_id": id, "clips": clips})))
}

async fn thumbnail(State(s): State<ApiState>, Path(id): Path<String>) -> ApiResult<Response> {
    let app = s.app.clone();
    let png = blocking(move || app.thumbnail(&id)).await??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn query(State(s): State<ApiState>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: QueryRequest = parse(&body)?;
    let app = s.app.clone();
    let resp = blocking(move || app.query(&req)).await??;
    Ok(Json(serde_json::to_value(resp).expect("response serializes")))
}

async fn eval_run(State(s): State<ApiState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: EvalRequest = parse(&body)?;
    let app = s.app.clone();
    let job = blocking(move || app.submit_eval(&req)).await??;
    s.spawn_job(&job);
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": job.id, "status": job.status}))))
}

async fn review_items(State(s): State<ApiState>) -> ApiResult<Json<Value>> {
    let app = s.app.clone();
    let items = blocking(move || app.review.list()).await??;
    Ok(Json(json!({"items": items})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Decision {
    #[serde(default)]
    reviewer: Option<String>,
    #[serde(default)]
    reason: Option<String>,
    #[serde(default)]
    sample: Option<QaSample>,
}

async fn review_action(
    State(s): State<ApiState>,
    Path((id, action)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let d: Decision = if body.is_empty() {
        Decision {
            reviewer: None,
            reason: None,
            sample: None,
        }
    } else {
        parse(&body)?
    };
    let app = s.app.clone();
    let item = blocking(move || match action.as_str() {
        "accept" => app.review.accept(&id, d.reviewer),
        "reject" => match d.reason {
            Some(r) if !r.trim().is_empty() => app.review.reject(&id, d.reviewer, r),
            _ => Err(ReviewError::Invalid("rejecting needs a reason".into())),
        },
        "edit" => match d.sample {
            Some(sample) => app.review.edit(&id, d.reviewer, sample),
            None => Err(ReviewError::Invalid("editing needs a sample".into())),
        },
        other => Err(ReviewError::NotFound(format!("action `{other}`"))),
    })
    .await??;
    Ok(Json(serde_json::to_value(item).expect("item serializes")))
}

async fn openapi() -> Response {
    ([(header::CONTENT_TYPE, "application/json")], OPENAPI).into_response()
}

async fn health(State(s): State<ApiState>) -> Json<Value> {
    let snap = s.app.index.snapshot();
    Json(json!({"status": "ok", "clips": snap.len(), "videos": s.app.registry.list().len()}))
}

pub fn router(state: ApiState) -> Router {
    let v1 = Router::new()
        .route("/v1/ingest/detections", post(ingest))
        .route("/v1/jobs", get(list_jobs))
        .route("/v1/jobs/{id}", get(get_job))
        .route("/v1/videos", get(list_videos))
        .route("/v1/videos/{id}/clips", get(video_clips))
        .route("/v1/clips/{id}/thumbnail", get(thumbnail))
        .route("/v1/query", post(query))
        .route("/v1/eval/run", post(eval_run))
        .route("/v1/review/items", get(review_items))
        .route("/v1/review/items/{id}/{action}", post(review_action))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .merge(v1)
        .route("/v1/openapi.json", get(openapi))
        .route("/healthz", get(health))
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

/// Serves until `shutdown` resolves, resuming unfinished jobs first.
pub async fn serve(
    app: Arc<App>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let state = ApiState::new(app);
    state.resume_unfinished();
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

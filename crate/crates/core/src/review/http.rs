//! JSON API over the review store, plus static hosting of the review UI.
//!
//! Mutations accept an `Idempotency-Key` header; a retried request with the
//! same key and body is acknowledged without writing again. Reviewer and
//! annotator ids may come from the body or the `X-Reviewer-Id` header.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

use super::{Ack, Catalog, LabelEvent, ReviewError, ReviewScore, ReviewStore, ReviewTarget};
use crate::eval::{EvalError, Report};
use crate::gateway::{ModelVerdict, PromptId, ResponseMode};
use crate::model::{ConflictLabel, Provenance, Split, FRAMES_PER_OBSERVATION};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const REVIEWER_HEADER: &str = "x-reviewer-id";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<ReviewStore>,
    pub catalog: Arc<dyn Catalog>,
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Directory holding the built review UI; served at `/`.
    pub ui_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

pub struct ApiError(ReviewError);

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        ApiError(e)
    }
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match &self.0 {
            ReviewError::UnknownRun(_) | ReviewError::UnknownObservation(_) | ReviewError::NoScores { .. } => {
                StatusCode::NOT_FOUND
            }
            ReviewError::MissingTargetText { .. } | ReviewError::RangeViolation { .. } | ReviewError::MissingField(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ReviewError::IdempotencyConflict(_) | ReviewError::Eval(EvalError::EmptyRun) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match &self.0 {
            ReviewError::UnknownRun(_) => "unknown_run",
            ReviewError::UnknownObservation(_) => "unknown_observation",
            ReviewError::MissingTargetText { .. } => "missing_target_text",
            ReviewError::RangeViolation { .. } => "range_violation",
            ReviewError::MissingField(_) => "missing_field",
            ReviewError::NoScores { .. } => "no_scores",
            ReviewError::IdempotencyConflict(_) => "idempotency_conflict",
            ReviewError::Eval(EvalError::EmptyRun) => "empty_run",
            _ => "store_failure",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({"error": self.code(), "message": self.0.to_string()}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Store and catalog calls touch the disk; keep them off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ReviewError> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(ReviewError::Io(std::io::Error::other(e.to_string())))),
    }
}

fn header_str(h: &HeaderMap, name: &str) -> Option<String> {
    h.get(name).and_then(|v| v.to_str().ok()).map(str::trim).filter(|s| !s.is_empty()).map(String::from)
}

#[derive(Debug, Deserialize)]
pub struct ObservationQuery {
    pub split: Option<Split>,
    pub labeled: Option<bool>,
    #[serde(default)]
    pub offset: usize,
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ObservationSummary {
    pub id: String,
    pub split: Option<Split>,
    pub ground_truth: Option<ConflictLabel>,
    pub provenance: Provenance,
    pub frame_urls: Vec<String>,
    /// Latest label per annotator.
    pub labels: Vec<LabelEvent>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Page<T> {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<T>,
}

const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 500;

async fn list_observations(State(s): State<AppState>, Query(q): Query<ObservationQuery>) -> ApiResult<Json<Page<ObservationSummary>>> {
    let page = blocking(move || {
        let Some(m) = s.catalog.manifest()? else {
            return Ok(Page { total: 0, offset: q.offset, limit: 0, items: vec![] });
        };
        let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
        let matching: Vec<_> = m
            .observations
            .iter()
            .filter(|o| q.split.is_none_or(|sp| o.split == Some(sp)))
            .filter(|o| q.labeled.is_none_or(|l| o.ground_truth.is_some() == l))
            .collect();
        let items = s.store.read(|st| {
            matching
                .iter()
                .skip(q.offset)
                .take(limit)
                .map(|o| ObservationSummary {
                    id: o.id.clone(),
                    split: o.split,
                    ground_truth: o.ground_truth,
                    provenance: o.provenance,
                    frame_urls: (0..FRAMES_PER_OBSERVATION).map(|k| format!("/api/observations/{}/frames/{k}", o.id)).collect(),
                    labels: st.labels_for(&o.id).cloned().collect(),
                })
                .collect()
        });
        Ok(Page { total: matching.len(), offset: q.offset, limit, items })
    })
    .await?;
    Ok(Json(page))
}

async fn frame_bytes(State(s): State<AppState>, Path((id, k)): Path<(String, usize)>) -> ApiResult<Response> {
    let bytes = blocking(move || {
        let m = s.catalog.manifest()?;
        let o = m.as_ref().and_then(|m| m.get(&id)).ok_or_else(|| ReviewError::UnknownObservation(id.clone()))?;
        let frame = o.frames.get(k).ok_or_else(|| ReviewError::UnknownObservation(format!("{id}/frames/{k}")))?;
        Ok(frame.image_ref.load(&s.catalog.root())?)
    })
    .await?;
    let mime = match image::guess_format(&bytes) {
        Ok(image::ImageFormat::Png) => "image/png",
        Ok(image::ImageFormat::Jpeg) => "image/jpeg",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

#[derive(Debug, Deserialize)]
pub struct LabelRequest {
    #[serde(default)]
    pub annotator_id: Option<String>,
    pub observation_id: String,
    pub label: ConflictLabel,
    #[serde(default)]
    pub submitted_at: Option<String>,
}

fn ack_response(ack: Ack) -> Response {
    let status = if ack.replayed { StatusCode::OK } else { StatusCode::CREATED };
    (status, Json(ack)).into_response()
}

async fn post_label(State(s): State<AppState>, headers: HeaderMap, Json(req): Json<LabelRequest>) -> ApiResult<Response> {
    let event = LabelEvent {
        annotator_id: req.annotator_id.or_else(|| header_str(&headers, REVIEWER_HEADER)).unwrap_or_default(),
        observation_id: req.observation_id,
        label: req.label,
        submitted_at: req.submitted_at.unwrap_or_default(),
    };
    let key = header_str(&headers, IDEMPOTENCY_HEADER);
    let ack = blocking(move || s.store.record_label(event, key, s.catalog.as_ref())).await?;
    Ok(ack_response(ack))
}

#[derive(Debug, Deserialize)]
pub struct ScoreRequest {
    #[serde(default)]
    pub reviewer_id: Option<String>,
    pub run_id: String,
    pub observation_id: String,
    pub target: ReviewTarget,
    pub clarity: i64,
    pub accuracy: i64,
    pub practical_relevance: i64,
    #[serde(default)]
    pub submitted_at: Option<String>,
}

async fn post_score(State(s): State<AppState>, headers: HeaderMap, Json(req): Json<ScoreRequest>) -> ApiResult<Response> {
    let score = ReviewScore {
        reviewer_id: req.reviewer_id.or_else(|| header_str(&headers, REVIEWER_HEADER)).unwrap_or_default(),
        run_id: req.run_id,
        observation_id: req.observation_id,
        target: req.target,
        clarity: req.clarity,
        accuracy: req.accuracy,
        practical_relevance: req.practical_relevance,
        submitted_at: req.submitted_at.unwrap_or_default(),
    };
    let key = header_str(&headers, IDEMPOTENCY_HEADER);
    let ack = blocking(move || s.store.record_score(score, key, s.catalog.as_ref())).await?;
    Ok(ack_response(ack))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub backend_id: String,
    pub prompt_id: PromptId,
    pub split: Split,
    pub mode: ResponseMode,
    pub finished: bool,
    pub verdicts: usize,
    pub excluded: usize,
    pub split_size: usize,
}

async fn list_runs(State(s): State<AppState>) -> ApiResult<Json<Vec<RunSummary>>> {
    let runs = blocking(move || s.catalog.runs()).await?;
    Ok(Json(
        runs.into_iter()
            .map(|r| RunSummary {
                finished: r.is_finished(),
                verdicts: r.verdicts.len(),
                excluded: r.excluded.len(),
                split_size: r.ground_truth.len(),
                run_id: r.run_id,
                backend_id: r.backend_id,
                prompt_id: r.prompt_id,
                split: r.split,
                mode: r.mode,
            })
            .collect(),
    ))
}

async fn run_verdicts(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<ModelVerdict>>> {
    let run = blocking(move || s.catalog.run(&id)?.ok_or(ReviewError::UnknownRun(id))).await?;
    Ok(Json(run.verdicts))
}

#[derive(Debug, Deserialize)]
pub struct AggregateQuery {
    pub target: ReviewTarget,
}

async fn run_aggregate(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AggregateQuery>,
) -> ApiResult<Json<super::Aggregate>> {
    let agg = blocking(move || {
        if s.catalog.run(&id)?.is_none() {
            return Err(ReviewError::UnknownRun(id));
        }
        s.store.aggregate(&id, q.target)
    })
    .await?;
    Ok(Json(agg))
}

async fn run_report(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Report>> {
    let report = blocking(move || {
        let run = s.catalog.run(&id)?.ok_or(ReviewError::UnknownRun(id))?;
        Ok(Report::new(&run)?)
    })
    .await?;
    Ok(Json(report))
}

pub fn router(state: AppState, opts: &ServeOptions) -> Router {
    let origin = match &opts.cors_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => AllowOrigin::exact(v),
            Err(_) => AllowOrigin::any(),
        },
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new().allow_origin(origin).allow_methods([Method::GET, Method::POST]).allow_headers(Any);
    let api = Router::new()
        .route("/api/observations", get(list_observations))
        .route("/api/observations/{id}/frames/{k}", get(frame_bytes))
        .route("/api/labels", post(post_label))
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{id}/verdicts", get(run_verdicts))
        .route("/api/runs/{id}/aggregate", get(run_aggregate))
        .route("/api/scores", post(post_score))
        .route("/api/reports/{run_id}", get(run_report))
        .with_state(state);
    let app = match &opts.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors)
}

/// Serve until ctrl-c, then snapshot the store.
pub async fn serve(addr: SocketAddr, state: AppState, opts: ServeOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let store = state.store.clone();
    axum::serve(listener, router(state, &opts))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    store.snapshot().map_err(|e| std::io::Error::other(e.to_string()))
}

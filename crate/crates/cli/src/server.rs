//! HTTP service over the operations in [`crate::ops`].
//!
//! Generation, explanation and grid requests return a job immediately
//! (202); poll `GET /jobs/{id}`. All state lives in the store, so a restart
//! loses nothing but the jobs that were running, which are marked failed.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use exforge_core::store::ExportOutcome;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::config::ServerConfig;
use crate::error::{ApiError, ErrorCode};
use crate::jobs::{self, Job, JobKind};
use crate::ops::{self, Context};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.http_status())
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// JSON body extractor whose rejections are [`ApiError`]s.
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(rejection) => Err(json_rejection(rejection)),
        }
    }
}

fn json_rejection(rejection: JsonRejection) -> ApiError {
    ApiError::validation(rejection.body_text())
}

#[derive(Clone)]
pub struct AppState {
    ctx: Arc<Context>,
    /// Target (bundle or grid id) to the pending job acting on it.
    in_flight: Arc<Mutex<HashMap<String, String>>>,
    token: Option<Arc<str>>,
}

/// Builds the router. Jobs left pending by an earlier process are marked
/// failed first.
pub fn app(ctx: Context, settings: &ServerConfig) -> Result<Router, ApiError> {
    let interrupted = jobs::fail_interrupted(&ctx.store)?;
    if interrupted > 0 {
        tracing::warn!(interrupted, "marked interrupted jobs as failed");
    }
    let state = AppState {
        ctx: Arc::new(ctx),
        in_flight: Arc::default(),
        token: settings.token.as_deref().map(Arc::from),
    };
    let api = Router::new()
        .route("/bundles:generate", post(generate))
        .route("/bundles", get(list_bundles))
        .route("/bundles/{id}", get(get_bundle).post(bundle_action))
        .route("/bundles/{id}/assessment", post(record_assessment))
        .route("/assessments/{id}", post(assessment_action))
        .route("/explanations:generate", post(explain))
        .route("/explanations/{id}", get(get_explanation))
        .route("/explanations/{id}/judgments", post(judge))
        .route("/grids", post(run_grid))
        .route("/grids/{id}/summary", get(grid_summary))
        .route("/export", get(export))
        .route("/jobs/{id}", get(get_job))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }));
    let router = match &settings.assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such route") }),
    };
    Ok(router.with_state(state))
}

pub async fn serve(ctx: Context, settings: &ServerConfig) -> Result<(), ApiError> {
    let router = app(ctx, settings)?;
    let addr = format!("{}:{}", settings.host, settings.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| ApiError::internal(format!("cannot bind {addr}: {e}")))?;
    tracing::info!("listening on http://{addr}");
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let expected = format!("Bearer {token}");
        let given = req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return ApiError::new(ErrorCode::Unauthorized, "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Context) -> Result<T, ApiError> + Send + 'static,
{
    let ctx = state.ctx.clone();
    tokio::task::spawn_blocking(move || f(&ctx))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn to_value<T: Serialize>(v: T) -> Result<Value, ApiError> {
    serde_json::to_value(v).map_err(|e| ApiError::internal(e.to_string()))
}

fn accepted(job: Job) -> Response {
    let location = HeaderValue::from_str(&format!("/jobs/{}", job.id)).ok();
    let mut response = (StatusCode::ACCEPTED, Json(job)).into_response();
    if let Some(l) = location {
        response.headers_mut().insert(header::LOCATION, l);
    }
    response
}

/// Persists a pending job and runs `work` on the blocking pool. With
/// `single_flight`, a pending job for the same target is returned instead
/// of starting another.
async fn spawn_job<F>(
    state: &AppState,
    kind: JobKind,
    target: Option<String>,
    single_flight: bool,
    work: F,
) -> Result<Job, ApiError>
where
    F: FnOnce(&Context) -> Result<Value, ApiError> + Send + 'static,
{
    let job = Job::pending(kind, target.clone());
    let key = target.filter(|_| single_flight);
    let existing = key.as_ref().and_then(|key| {
        let mut map = state.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        match map.get(key) {
            Some(id) => Some(id.clone()),
            None => {
                map.insert(key.clone(), job.id.clone());
                None
            }
        }
    });
    if let Some(existing) = existing {
        return blocking(state, move |ctx| jobs::load(&ctx.store, &existing)).await;
    }
    let release = {
        let in_flight = state.in_flight.clone();
        let key = key.clone();
        move || {
            if let Some(key) = key {
                in_flight.lock().unwrap_or_else(|e| e.into_inner()).remove(&key);
            }
        }
    };
    let pending = job.clone();
    if let Err(e) = blocking(state, move |ctx| jobs::save(&ctx.store, &pending)).await {
        release();
        return Err(e);
    }
    let ctx = state.ctx.clone();
    let mut record = job.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = work(&ctx);
        record.finish(outcome);
        if let Err(e) = jobs::save(&ctx.store, &record) {
            tracing::error!(job = %record.id, "cannot save job: {e}");
        }
        release();
    });
    Ok(job)
}

/// Splits `abc:evaluate` into `("abc", "evaluate")`.
fn split_action(segment: &str) -> Result<(&str, &str), ApiError> {
    segment
        .rsplit_once(':')
        .ok_or_else(|| ApiError::new(ErrorCode::NotFound, format!("no action in `{segment}`")))
}

async fn generate(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<ops::GenerateRequest>,
) -> Result<Response, ApiError> {
    let job = spawn_job(&state, JobKind::Generate, None, false, move |ctx| {
        to_value(ops::generate(ctx, &req)?)
    })
    .await?;
    Ok(accepted(job))
}

#[derive(Debug, Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    50
}

async fn list_bundles(
    State(state): State<AppState>,
    Query(page): Query<Page>,
) -> Result<Json<ops::BundleList>, ApiError> {
    let limit = page.limit.min(500);
    blocking(&state, move |ctx| ops::list_bundles(ctx, page.offset, limit))
        .await
        .map(Json)
}

async fn get_bundle(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<ops::BundleView>, ApiError> {
    blocking(&state, move |ctx| ops::bundle_view(ctx, &id)).await.map(Json)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoopRequest {
    #[serde(default)]
    budget: Option<u32>,
}

/// `POST /bundles/{id}:evaluate`, `:regenerate` and `:backfill`.
async fn bundle_action(
    State(state): State<AppState>,
    Path(segment): Path<String>,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let (id, action) = split_action(&segment)?;
    let id = id.to_string();
    let kind = match action {
        "evaluate" => {
            let report = blocking(&state, move |ctx| ops::evaluate(ctx, &id)).await?;
            return Ok(Json(report).into_response());
        }
        "regenerate" => JobKind::Regenerate,
        "backfill" => JobKind::Backfill,
        other => {
            return Err(ApiError::new(ErrorCode::NotFound, format!("unknown action `{other}`")))
        }
    };
    let req: LoopRequest = if body.iter().all(u8::is_ascii_whitespace) {
        LoopRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::validation(e.to_string()))?
    };
    {
        let check = id.clone();
        blocking(&state, move |ctx| ctx.store.get_bundle(&check).map_err(ApiError::from)).await?;
    }
    // One loop per bundle at a time; a repeated request joins the first.
    let target = id.clone();
    let job = spawn_job(&state, kind, Some(id), true, move |ctx| match kind {
        JobKind::Backfill => to_value(ops::backfill(ctx, &target, req.budget)?),
        _ => to_value(ops::regenerate(ctx, &target, req.budget)?),
    })
    .await?;
    Ok(accepted(job))
}

async fn record_assessment(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ops::AssessmentRequest>,
) -> Result<Response, ApiError> {
    let record = blocking(&state, move |ctx| ops::record_assessment(ctx, &id, req)).await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

/// `POST /assessments/{record_id}:resolve`.
async fn assessment_action(
    State(state): State<AppState>,
    Path(segment): Path<String>,
    body: Request,
) -> Result<Response, ApiError> {
    let (id, action) = split_action(&segment)?;
    if action != "resolve" {
        return Err(ApiError::new(ErrorCode::NotFound, format!("unknown action `{action}`")));
    }
    let id = id.to_string();
    let ApiJson(req) = ApiJson::<ops::ResolveRequest>::from_request(body, &()).await?;
    let effective = blocking(&state, move |ctx| ops::resolve(ctx, &id, req)).await?;
    Ok(Json(effective).into_response())
}

async fn explain(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<ops::ExplainRequest>,
) -> Result<Response, ApiError> {
    let job = spawn_job(&state, JobKind::Explain, None, false, move |ctx| {
        to_value(ops::explain(ctx, &req)?)
    })
    .await?;
    Ok(accepted(job))
}

async fn get_explanation(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    blocking(&state, move |ctx| {
        let explanation = ctx.store.get_explanation(&id)?;
        let judgments = ctx.store.judgments(&id)?;
        Ok(json!({ "explanation": explanation, "judgments": judgments }))
    })
    .await
    .map(Json)
}

async fn judge(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ops::JudgeRequest>,
) -> Result<Json<exforge_core::ExplanationScore>, ApiError> {
    blocking(&state, move |ctx| ops::judge(ctx, &id, req)).await.map(Json)
}

async fn run_grid(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<ops::GridRequest>,
) -> Result<Response, ApiError> {
    // Reject a bad spec now rather than in the job.
    if let Some(spec) = &req.spec {
        spec.clone().resolved()?;
    }
    let target = req.id.clone();
    let job = spawn_job(&state, JobKind::Grid, target, true, move |ctx| {
        let record = ops::run_grid(ctx, req)?;
        to_value(json!({ "grid_id": record.id, "summary": record.summary }))
    })
    .await?;
    Ok(accepted(job))
}

#[derive(Debug, Deserialize)]
struct SummaryQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn grid_summary(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SummaryQuery>,
) -> Result<Response, ApiError> {
    let record = blocking(&state, move |ctx| ops::grid_record(ctx, &id)).await?;
    Ok(match q.format.as_deref() {
        None | Some("json") => Json(record.summary).into_response(),
        Some("markdown") => text("text/markdown; charset=utf-8", record.summary.to_markdown()),
        Some("csv") => text("text/csv; charset=utf-8", record.summary.to_csv()),
        Some(other) => return Err(ApiError::validation(format!("unknown format `{other}`"))),
    })
}

fn text(content_type: &'static str, body: String) -> Response {
    ([(header::CONTENT_TYPE, content_type)], body).into_response()
}

async fn export(
    State(state): State<AppState>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> Result<Response, ApiError> {
    let outcome = blocking(&state, move |ctx| {
        let filter = ops::filter_from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        ops::export(ctx, &filter)
    })
    .await?;
    Ok(match outcome {
        ExportOutcome::Empty => StatusCode::NO_CONTENT.into_response(),
        ExportOutcome::Pack { archive, manifest } => Response::builder()
            .header(header::CONTENT_TYPE, "application/zip")
            .header(
                header::CONTENT_DISPOSITION,
                "attachment; filename=\"exercises.zip\"",
            )
            .header("x-pack-sha256", manifest.sha256)
            .header("x-pack-count", manifest.count.to_string())
            .body(Body::from(archive))
            .map_err(|e| ApiError::internal(e.to_string()))?,
    })
}

async fn get_job(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Job>, ApiError> {
    blocking(&state, move |ctx| jobs::load(&ctx.store, &id)).await.map(Json)
}

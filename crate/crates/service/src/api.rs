//! HTTP routes.

use std::future::Future;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use symscreen_core::taxonomy::taxonomy;
use tower_http::services::ServeDir;

use crate::model::AdjudicationRequest;
use crate::service::{ReviewFilter, Service, ServiceError};

type AppState = Arc<Service>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Store(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

#[derive(Deserialize)]
struct StartRun {
    backend_id: String,
    corpus_ref: String,
}

async fn start_run(State(s): State<AppState>, Json(body): Json<StartRun>) -> ApiResult<impl IntoResponse> {
    let run = s.start_run(&body.backend_id, &body.corpus_ref)?;
    Ok((StatusCode::ACCEPTED, Json(run)))
}

async fn list_runs(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.runs())
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.run(&id)?))
}

async fn get_detections(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.detections(&id)?.as_ref().clone()))
}

async fn get_review(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(f): Query<ReviewFilter>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.review_queue(&id, &f)?))
}

async fn post_adjudication(
    State(s): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<AdjudicationRequest>,
) -> ApiResult<impl IntoResponse> {
    let key = headers.get("idempotency-key").and_then(|v| v.to_str().ok()).map(str::to_string);
    let (adj, created) = s.adjudicate(req, key)?;
    Ok((if created { StatusCode::CREATED } else { StatusCode::OK }, Json(adj)))
}

#[derive(Deserialize)]
struct GoldQuery {
    merge: Option<bool>,
}

async fn get_gold(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<GoldQuery>,
) -> ApiResult<impl IntoResponse> {
    let (gold, conflicts) = s.gold(&id, q.merge)?;
    let body = symscreen_core::corpus::to_jsonl_string(&gold);
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-ndjson".to_string()),
            (header::HeaderName::from_static("x-gold-conflicts"), conflicts.to_string()),
        ],
        body,
    ))
}

async fn get_conflicts(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.conflicts(&id)?))
}

#[derive(Deserialize)]
struct VectorQuery {
    run_id: Option<String>,
    window_days: Option<u32>,
}

async fn get_vector(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<VectorQuery>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.patient_vector(&id, q.run_id.as_deref(), q.window_days)?))
}

async fn get_metrics(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.metrics())
}

async fn get_taxonomy() -> impl IntoResponse {
    Json(taxonomy().categories().to_vec())
}

async fn get_backends(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.backends())
}

async fn guard(State(s): State<AppState>, req: Request, next: Next) -> Response {
    s.count_request();
    if let Some(token) = &s.config().token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return (StatusCode::UNAUTHORIZED, Json(json!({ "error": "missing or invalid bearer token" })))
                .into_response();
        }
    }
    next.run(req).await
}

async fn no_ui() -> impl IntoResponse {
    (StatusCode::NOT_FOUND, "review UI bundle not installed; see static_dir in the service config\n")
}

pub fn router(service: Arc<Service>) -> Router {
    let api = Router::new()
        .route("/api/runs", post(start_run).get(list_runs))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/detections", get(get_detections))
        .route("/api/runs/{id}/review", get(get_review))
        .route("/api/runs/{id}/gold", get(get_gold))
        .route("/api/runs/{id}/conflicts", get(get_conflicts))
        .route("/api/adjudications", post(post_adjudication))
        .route("/api/patients/{id}/vector", get(get_vector))
        .route("/api/metrics", get(get_metrics))
        .route("/api/taxonomy", get(get_taxonomy))
        .route("/api/backends", get(get_backends))
        .route_layer(middleware::from_fn_with_state(service.clone(), guard))
        .with_state(service.clone());
    match &service.config().static_dir {
        Some(dir) if dir.is_dir() => api.fallback_service(ServeDir::new(dir)),
        _ => api.fallback(no_ui),
    }
}

/// Serves until `shutdown` resolves, then lets the current run finish.
pub async fn serve(
    service: Arc<Service>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(service.clone());
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    tokio::task::spawn_blocking(move || service.shutdown()).await.ok();
    Ok(())
}

/// Binds the configured address and serves until Ctrl-C. `on_bound` gets the
/// actual address, which differs from the configured one for port 0.
pub fn serve_blocking(service: Service, on_bound: impl FnOnce(std::net::SocketAddr)) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let service = Arc::new(service);
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&service.config().listen).await?;
        on_bound(listener.local_addr()?);
        serve(service, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}

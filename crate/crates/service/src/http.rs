//! HTTP surface. Scoring runs on the blocking pool; the sandbox semaphore
//! inside the executor bounds concurrent children, so bursts queue.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;

use crate::engine::{Engine, ErrorBody, RequestError, RewardRequest};

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    config_json: Arc<String>,
}

fn json(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error(status: StatusCode, msg: String) -> Response {
    let body = serde_json::to_string(&ErrorBody { group_id: None, error: msg }).expect("error body serializes");
    json(status, body)
}

/// `config_json` is served verbatim from `GET /v1/config`; pass the redacted form.
pub fn router(engine: Arc<Engine>, config_json: String, max_body_bytes: usize) -> Router {
    let state = AppState {
        engine,
        config_json: Arc::new(config_json),
    };
    Router::new()
        .route("/v1/reward-groups", post(reward_groups))
        .route("/healthz", get(healthz))
        .route("/v1/config", get(config))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "not found".into()) })
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

async fn healthz() -> Response {
    json(StatusCode::OK, r#"{"status":"ok"}"#.into())
}

async fn config(State(s): State<AppState>) -> Response {
    json(StatusCode::OK, s.config_json.as_ref().clone())
}

async fn reward_groups(State(s): State<AppState>, body: Bytes) -> Response {
    let req: RewardRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid request: {e}")),
    };
    let group_id = req.group_id.clone();
    let engine = s.engine.clone();
    match tokio::task::spawn_blocking(move || engine.score_request(&req)).await {
        Ok(Ok(resp)) => json(StatusCode::OK, resp.to_json()),
        Ok(Err(e)) => {
            let status = match e {
                RequestError::UnknownRecord => StatusCode::NOT_FOUND,
                RequestError::Invalid(_) => StatusCode::BAD_REQUEST,
                RequestError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error(status, e.to_string())
        }
        Err(e) => {
            tracing::error!(group = %group_id, error = %e, "scoring task failed");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal error".into())
        }
    }
}

/// Serve until `shutdown` resolves, then stop accepting and let in-flight
/// requests finish.
pub async fn serve_on<F>(listener: tokio::net::TcpListener, app: Router, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    serve_on(listener, app, shutdown_signal()).await
}

/// Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        if let Err(e) = tokio::signal::ctrl_c().await {
            tracing::warn!(error = %e, "cannot listen for ctrl-c");
            std::future::pending::<()>().await;
        }
    };
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                tracing::warn!(error = %e, "cannot listen for SIGTERM");
                std::future::pending::<()>().await;
            }
        }
    };
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutdown requested; draining");
}

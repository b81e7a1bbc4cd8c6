//! HTTP/JSON service over a [`bankflow_core::Engine`].
//!
//! Callers authenticate with `Authorization: Bearer <token>`; tokens come
//! from a static table (see [`TokenTable`]). Errors are returned as
//! `{"code": ..., "message": ...}` where `code` is the engine error name.

pub mod auth;
pub mod error;
pub mod routes;

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::Request;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::Router;
use bankflow_core::{Engine, RetryPolicy};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub use auth::{Role, RoleToken, TokenError, TokenTable};
pub use error::{status_for, ApiError, ErrorBody};

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub tokens: Arc<TokenTable>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, tokens: TokenTable) -> Self {
        AppState {
            engine,
            tokens: Arc::new(tokens),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(routes::healthz))
        .route("/whoami", get(routes::whoami))
        .route("/chains", get(routes::chains))
        .route("/requests", post(routes::submit))
        .route("/requests/{id}", get(routes::request))
        .route("/requests/{id}/history", get(routes::history))
        .route("/requests/{id}/decision", post(routes::decide))
        .route("/queues/{tier_id}", get(routes::queue))
        .route("/subscriptions", post(routes::subscribe))
        .route("/subscriptions/{id}", delete(routes::unsubscribe))
        .route("/customers/{id}/notifications", get(routes::notifications))
        .route(
            "/customers/{id}/subscriptions",
            get(routes::customer_subscriptions),
        )
        .route("/customers/{id}/requests", get(routes::customer_requests))
        .route("/events", post(routes::publish))
        .fallback(not_found)
        .layer(middleware::from_fn(cors))
        .with_state(state)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such route")
}

/// Lets a browser console on another origin call the API.
async fn cors(request: Request, next: Next) -> Response {
    let mut response = if request.method() == Method::OPTIONS {
        StatusCode::NO_CONTENT.into_response()
    } else {
        next.run(request).await
    };
    let headers = response.headers_mut();
    headers.insert(
        header::ACCESS_CONTROL_ALLOW_ORIGIN,
        HeaderValue::from_static("*"),
    );
    headers.insert(
        header::ACCESS_CONTROL_ALLOW_HEADERS,
        HeaderValue::from_static("authorization, content-type"),
    );
    headers.insert(
        header::ACCESS_CONTROL_ALLOW_METHODS,
        HeaderValue::from_static("GET, POST, DELETE, OPTIONS"),
    );
    response
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Pause between outbox sweeps.
    pub outbox_interval: Duration,
    pub retry: RetryPolicy,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            outbox_interval: Duration::from_millis(500),
            retry: RetryPolicy::new(
                3,
                vec![Duration::from_millis(100), Duration::from_millis(400)],
            ),
        }
    }
}

/// Sweeps the outbox every `interval` until the task is aborted.
pub fn spawn_outbox_driver(
    engine: Arc<Engine>,
    interval: Duration,
    policy: RetryPolicy,
) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(interval);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            ticker.tick().await;
            let engine = engine.clone();
            let policy = policy.clone();
            match tokio::task::spawn_blocking(move || engine.drive_outbox(&policy)).await {
                Ok(Ok(0)) => {}
                Ok(Ok(n)) => tracing::debug!(attempts = n, "outbox sweep"),
                Ok(Err(e)) => tracing::error!(code = e.code(), "outbox sweep failed: {e}"),
                Err(e) => tracing::error!("outbox task panicked: {e}"),
            }
        }
    })
}

/// Serves the API on `listener` with a background outbox driver until
/// `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    options: ServeOptions,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let driver = spawn_outbox_driver(state.engine.clone(), options.outbox_interval, options.retry);
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "listening");
    }
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await;
    driver.abort();
    result
}

/// Resolves on Ctrl-C.
pub async fn ctrl_c() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        tracing::error!("cannot listen for Ctrl-C: {e}");
        std::future::pending::<()>().await;
    }
}

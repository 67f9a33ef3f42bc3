//! HTTP API over one evaluation snapshot.
//!
//! | method | path                                   | body / query                 |
//! |--------|----------------------------------------|------------------------------|
//! | GET    | `/health`                              |                              |
//! | GET    | `/queue`                               | `?status=FLAGGED&top=20`     |
//! | GET    | `/package/{registry}/{name}/{version}` |                              |
//! | POST   | `/label`                               | [`LabelBody`]                |
//! | GET    | `/rules/stats`                         |                              |
//!
//! Errors are `{"error": CODE, "message": text}` with status 404, 409 or 422.
//! Label writes go through one lock, so concurrent submissions are applied
//! one at a time and the first one wins.

mod error;
mod state;

pub use error::ApiError;
pub use state::{LabelBody, LabelResponse, PackageResponse, Snapshot, TriageState};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method};
use axum::routing::{get, post};
use axum::{Json, Router};
use pkgvet::heuristics::{QueueEntry, RuleStat};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const DEFAULT_ADDR: SocketAddr = SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), 8080);

#[derive(Debug, Default, Deserialize)]
pub struct QueueQuery {
    pub status: Option<String>,
    pub top: Option<usize>,
}

async fn health(State(state): State<Arc<TriageState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "reports": state.report_count() }))
}

async fn queue(State(state): State<Arc<TriageState>>, Query(q): Query<QueueQuery>) -> Result<Json<Vec<QueueEntry>>, ApiError> {
    let status = q.status.as_deref().filter(|s| !s.is_empty()).map(str::parse).transpose().map_err(ApiError::Invalid)?;
    Ok(Json(state.queue(status, q.top)))
}

async fn package(
    State(state): State<Arc<TriageState>>,
    Path((registry, rest)): Path<(String, String)>,
) -> Result<Json<PackageResponse>, ApiError> {
    // Scoped npm names contain a slash, so the version is the last segment.
    let (name, version) = rest.rsplit_once('/').ok_or_else(|| ApiError::NotFound(format!("{registry}/{rest}")))?;
    let coordinate = format!("{registry}/{name}@{version}")
        .parse()
        .map_err(|_| ApiError::NotFound(format!("{registry}/{name}@{version}")))?;
    state.package(&coordinate).map(Json)
}

async fn label(State(state): State<Arc<TriageState>>, body: axum::body::Bytes) -> Result<Json<LabelResponse>, ApiError> {
    let body: LabelBody = serde_json::from_slice(&body).map_err(|e| ApiError::Invalid(e.to_string()))?;
    state.label(body).map(Json)
}

async fn rule_stats(State(state): State<Arc<TriageState>>) -> Json<BTreeMap<String, RuleStat>> {
    Json(state.rule_stats())
}

fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(origin) = origin.to_str() else { return false };
    let Some(rest) = origin.strip_prefix("http://").or_else(|| origin.strip_prefix("https://")) else { return false };
    let host = match rest.strip_prefix('[') {
        Some(v6) => v6.split(']').next().unwrap_or(""),
        None => rest.split(':').next().unwrap_or(""),
    };
    host == "localhost" || host.parse::<IpAddr>().is_ok_and(|ip| ip.is_loopback())
}

/// Routes with CORS for loopback origins plus `extra_origins`.
pub fn router(state: Arc<TriageState>, extra_origins: &[String]) -> Router {
    let extra: Vec<HeaderValue> = extra_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(move |origin, _| is_local_origin(origin) || extra.contains(origin)))
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/queue", get(queue))
        .route("/package/{registry}/{*rest}", get(package))
        .route("/label", post(label))
        .route("/rules/stats", get(rule_stats))
        .layer(cors)
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    if !addr.ip().is_loopback() {
        tracing::warn!(%addr, "triage service has no authentication and is bound to a non-loopback address");
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "triage service listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

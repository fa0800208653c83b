//! HTTP/JSON service over a speciescope data root.
//!
//! The data root holds `manifest.csv`, images, an optional feature sidecar
//! and the service's own files: `ledger.jsonl`, `proposals.csv`, `models/`
//! and the content-addressed `static/` store.

pub mod api;
pub mod error;
pub mod jobs;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

pub use error::{ApiError, ServiceError};
pub use jobs::{JobHandle, JobKind, JobRequest, JobState};
pub use state::{AppState, ModelSlot, ServiceConfig, Space};

pub fn router(state: Arc<AppState>) -> axum::Router {
    api::routes(state)
}

/// Opens the data root and serves until ctrl-c. Binds to all interfaces.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let state = AppState::open(&cfg)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], cfg.port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr: addr.to_string(), source })?;
    tracing::info!(%addr, root = %cfg.data_root.display(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| ServiceError::Io { path: cfg.data_root.clone(), source })
}

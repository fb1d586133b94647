//! Command-line and HTTP front ends for concept proposal runs.

pub mod api;
pub mod cli;
pub mod error;
pub mod jobs;
pub mod openapi;
pub mod sessions;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use cbm_proposals::dataset::SCHEMA_VERSION;

use crate::api::AppState;
use crate::error::AppResult;
use crate::jobs::{spawn_workers, Registry};
use crate::sessions::Sessions;
use crate::store::Store;

/// Opens the store, rebuilds the job and session indexes, and starts the workers.
/// Must be called inside a tokio runtime.
pub fn start(store: Store, workers: usize) -> AppResult<AppState> {
    let registry = Registry::open(store.clone())?;
    let sessions = Arc::new(Sessions::open(store)?);
    spawn_workers(Arc::clone(&registry), Arc::clone(&sessions), workers);
    Ok(AppState { registry, sessions })
}

pub async fn serve(store: Store, addr: SocketAddr, workers: usize) -> anyhow::Result<()> {
    let state = start(store, workers)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, api::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

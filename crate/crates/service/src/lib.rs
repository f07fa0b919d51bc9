//! Microtask service for crowd-driven enhancement sessions.
//!
//! Workers fetch a microtask (several sessions' current sliders plus one
//! check slider), submit one position per slider, and each session advances
//! once enough responses pass the check. All state lives in a data directory
//! and survives restarts.

pub mod error;
pub mod http;
pub mod state;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use error::{ServiceError, ServiceResult};
pub use http::router;
pub use state::{Service, ServiceConfig};
pub use store::Store;

/// Opens the data directory and builds the router.
pub fn build(data_dir: impl Into<PathBuf>, cfg: ServiceConfig, static_dir: Option<PathBuf>) -> ServiceResult<axum::Router> {
    let service = Service::open(Store::open(data_dir)?, cfg)?;
    Ok(router(Arc::new(service), static_dir))
}

/// Serves on `listener` until the future resolves or the process ends.
pub async fn serve_on(listener: tokio::net::TcpListener, app: axum::Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}

/// Binds `addr` and serves forever.
pub async fn serve(addr: SocketAddr, app: axum::Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(listener, app).await
}

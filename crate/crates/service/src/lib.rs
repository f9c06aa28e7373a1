//! Trial-conduct HTTP service.
//!
//! Each trial is an event log under the data directory (`{id}.jsonl`). The
//! in-memory state is whatever replaying that log through the core engine
//! produces, so restarting the service loses nothing that was acknowledged.

pub mod api;
pub mod error;
pub mod log;
pub mod session;

use std::net::SocketAddr;
use std::path::Path;

pub use api::{router, AppState};
pub use error::{Result, ServiceError};

pub const ADDR_ENV: &str = "PLATEAU_DOSE_ADDR";
pub const DATA_DIR_ENV: &str = "PLATEAU_DOSE_DATA_DIR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_DATA_DIR: &str = "plateau-dose-data";

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, data_dir: &Path) -> Result<()> {
    let state = AppState::open(data_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %data_dir.display(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

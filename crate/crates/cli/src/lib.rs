//! Command-line harness and REST service.

pub mod api;
pub mod commands;
pub mod config;

use std::net::SocketAddr;

use anyhow::{Context, Result};

/// Serves the REST API until ctrl-c.
pub async fn serve(addr: SocketAddr, state: api::AppState) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, api::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

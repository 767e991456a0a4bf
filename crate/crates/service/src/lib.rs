//! JSON-over-HTTP interface to live diagnosis-feedback-adaptation sessions,
//! so a person can stand in for the simulated user.

pub mod api;
pub mod error;
pub mod routes;
pub mod state;
pub mod stream;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::Router;
use tokio::net::TcpListener;

pub use error::ApiError;
pub use state::{AppState, ServiceConfig};

pub fn app(state: Arc<AppState>) -> Router {
    routes::router(state)
}

/// Bind and serve until the process exits.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app(AppState::new(config))).await
}

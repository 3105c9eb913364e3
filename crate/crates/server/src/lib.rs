//! HTTP service and command-line front end for the grading engine.

pub mod api;

use std::future::Future;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use rubrag_core::{Engine, ServiceConfig};
use tokio::net::TcpListener;

pub use api::{router, ApiError, AppState};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot read config {path}: {reason}")]
    Config { path: String, reason: String },
    #[error("cannot bind {address}: {reason}")]
    BindFailure { address: String, reason: String },
    #[error("server failed: {0}")]
    Serve(String),
}

/// Reads a TOML config; missing keys fall back to defaults.
pub fn load_config(path: Option<&Path>) -> Result<ServiceConfig, ServerError> {
    let Some(path) = path else {
        return Ok(ServiceConfig::default());
    };
    let err = |reason: String| ServerError::Config {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    toml::from_str(&text).map_err(|e| err(e.to_string()))
}

/// Token from the configured environment variable; unset or empty disables auth.
pub fn token_from_env(config: &ServiceConfig) -> Option<String> {
    std::env::var(&config.auth_token_env_var)
        .ok()
        .filter(|t| !t.trim().is_empty())
}

pub async fn bind(address: &str) -> Result<TcpListener, ServerError> {
    TcpListener::bind(address).await.map_err(|e| ServerError::BindFailure {
        address: address.to_string(),
        reason: e.to_string(),
    })
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ServerError::Serve(e.to_string()))
}

/// Binds on an ephemeral or configured address and runs in the background.
pub async fn spawn(
    address: &str,
    state: AppState,
) -> Result<(SocketAddr, tokio::sync::oneshot::Sender<()>, tokio::task::JoinHandle<Result<(), ServerError>>), ServerError> {
    let listener = bind(address).await?;
    let addr = listener.local_addr().map_err(|e| ServerError::Serve(e.to_string()))?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let handle = tokio::spawn(serve(listener, state, async {
        let _ = rx.await;
    }));
    Ok((addr, tx, handle))
}

pub fn state(engine: Engine, token: Option<String>) -> AppState {
    AppState {
        engine: Arc::new(engine),
        token,
    }
}

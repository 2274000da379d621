use std::sync::Arc;
use std::time::Duration;

use fedprov_core::backend::BackendError;
use fedprov_core::hook::{BackendConfig, ConfigError, ConsentStore};
use fedprov_core::planner::LedgerError;
use fedprov_core::{GrantsLedger, HookService, IdentityBackend, MockBackend, ServiceConfig};
use thiserror::Error;
use tokio::net::TcpListener;

use crate::client::KeystoneClient;
use crate::hook_server::hook_router;
use crate::mock_server::mock_router;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] LedgerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn IdentityBackend>, BackendError> {
    Ok(match config {
        BackendConfig::Memory => Arc::new(MockBackend::new()),
        BackendConfig::Http {
            endpoint,
            token,
            timeout_secs,
        } => Arc::new(KeystoneClient::new(
            endpoint,
            token,
            Duration::from_secs(*timeout_secs),
        )?),
    })
}

/// Wires a [`HookService`] from a loaded config: backend, grants ledger and
/// consent store.
pub fn build_service(config: &ServiceConfig) -> Result<HookService, AppError> {
    let settings = config.settings()?;
    let backend = build_backend(&config.backend)?;
    let ledger = GrantsLedger::open(&config.ledger_path)?;
    let consent = ConsentStore::open(&config.consent_store_path)?;
    Ok(HookService::new(
        settings,
        backend,
        Arc::new(ledger),
        Arc::new(consent),
    ))
}

async fn shutdown_signal() {
    let _ = tokio::signal::ctrl_c().await;
}

pub async fn serve_hook(listener: TcpListener, service: Arc<HookService>) -> std::io::Result<()> {
    axum::serve(listener, hook_router(service))
        .with_graceful_shutdown(shutdown_signal())
        .await
}

pub async fn serve_mock(
    listener: TcpListener,
    backend: Arc<MockBackend>,
    token: Option<String>,
) -> std::io::Result<()> {
    axum::serve(listener, mock_router(backend, token))
        .with_graceful_shutdown(shutdown_signal())
        .await
}

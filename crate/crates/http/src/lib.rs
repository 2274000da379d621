//! HTTP surfaces around `fedprov-core`.
//!
//! - [`hook_router`]: the session hook endpoints, backed by a
//!   [`fedprov_core::HookService`].
//! - [`KeystoneClient`]: the identity backend over a Keystone v3 REST API.
//! - [`mock_router`]: a Keystone v3 subset over the in-memory mock, for
//!   local runs and tests.

mod app;
mod client;
mod hook_server;
mod mock_server;
pub mod wire;

pub use app::{build_backend, build_service, serve_hook, serve_mock, AppError};
pub use client::KeystoneClient;
pub use hook_server::hook_router;
pub use mock_server::mock_router;

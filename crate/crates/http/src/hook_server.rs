use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::rejection::FormRejection;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Form, Router};
use fedprov_core::hook::{ConsentForm, HookEvent, HookReply, HookRequest, HookResponse};
use fedprov_core::HookService;

/// The session hook (`GET <hook_path>`) and its consent form target
/// (`POST <hook_path>/consent`).
pub fn hook_router(service: Arc<HookService>) -> Router {
    let settings = service.settings();
    let hook_path = settings.hook_path.clone();
    let consent_path = settings.consent_path();
    Router::new()
        .route(&hook_path, get(session_hook))
        .route(&consent_path, post(consent))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(service)
}

async fn session_hook(
    State(service): State<Arc<HookService>>,
    Query(query): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> Response {
    let pairs: Vec<(String, String)> = headers
        .iter()
        .map(|(name, value)| {
            (
                name.as_str().to_owned(),
                String::from_utf8_lossy(value.as_bytes()).into_owned(),
            )
        })
        .collect();
    let return_url = query.get("return").cloned();
    let request = HookRequest::from_headers(
        return_url,
        pairs.iter().map(|(n, v)| (n.as_str(), v.as_str())),
        &service.settings().attributes,
    );
    run(service, move |s| s.handle_session_hook(&request)).await
}

async fn consent(
    State(service): State<Arc<HookService>>,
    form: Result<Form<ConsentForm>, FormRejection>,
) -> Response {
    let form = match form {
        Ok(Form(form)) => form,
        Err(e) => return (StatusCode::BAD_REQUEST, e.body_text()).into_response(),
    };
    run(service, move |s| s.handle_consent_decision(&form)).await
}

/// Hook handling blocks on the backend, so it runs off the async workers.
async fn run(
    service: Arc<HookService>,
    f: impl FnOnce(&HookService) -> HookReply + Send + 'static,
) -> Response {
    match tokio::task::spawn_blocking(move || f(&service)).await {
        Ok(reply) => {
            log(&reply.event);
            into_response(reply.response)
        }
        Err(e) => {
            tracing::error!(error = %e, "hook handler panicked");
            (StatusCode::INTERNAL_SERVER_ERROR, "internal error").into_response()
        }
    }
}

fn log(event: &HookEvent) {
    match event {
        HookEvent::Rejected { reason } => tracing::warn!(%reason, "hook request rejected"),
        HookEvent::DeniedNoEntitlement { identifier } => {
            tracing::info!(%identifier, "denied: no entitlement")
        }
        HookEvent::ConsentRequested { .. } => tracing::info!("consent requested"),
        HookEvent::ConsentAbandoned => tracing::info!("consent abandoned"),
        HookEvent::Provisioned { plan, .. } => {
            tracing::info!(steps = plan.steps.len(), "provisioned")
        }
        HookEvent::ProvisioningFailed { error, .. } => {
            tracing::error!(%error, "provisioning failed")
        }
    }
}

fn into_response(response: HookResponse) -> Response {
    let no_store = (header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
    match response {
        HookResponse::Redirect { location } => match HeaderValue::from_str(&location) {
            Ok(loc) => (StatusCode::FOUND, [(header::LOCATION, loc), no_store]).into_response(),
            Err(_) => (StatusCode::INTERNAL_SERVER_ERROR, "invalid redirect target").into_response(),
        },
        HookResponse::Page { html } => (
            [
                no_store,
                (header::X_FRAME_OPTIONS, HeaderValue::from_static("DENY")),
            ],
            Html(html),
        )
            .into_response(),
        HookResponse::Error { status, message } => {
            let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, [no_store], message).into_response()
        }
    }
}

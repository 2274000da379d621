//! The session-hook service.
//!
//! The SAML middleware detours the browser here mid-login, with the released
//! attributes attached. The service maps them to a local user, optionally
//! asks the user for consent, provisions the backend, and only then sends
//! the browser back into the middleware's login sequence. If provisioning
//! fails the login is not resumed.
//!
//! Everything here is transport-agnostic: requests and responses are plain
//! values, so the HTTP server and the simulation harness drive the same
//! code.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::attributes::{
    extract_bundle, AttributeBundle, AttributeConfig, AttributeError, MULTI_VALUE_SEPARATOR,
};
use crate::backend::{user_snapshot, BackendError, IdentityBackend};
use crate::clock::{Clock, SystemClock, TokenSource};
use crate::entitlement::{derive_desired_state, DesiredState, EntitlementConfig};
use crate::mapping::{apply_rules, MappingError, MappingRules};
use crate::planner::{
    compute_plan, execute_plan, ExecutionError, GrantsLedger, LedgerError, ProvisioningPlan,
    StepReport,
};

mod config;
mod consent;
mod page;

pub use config::{BackendConfig, ConfigError, ServiceConfig, CONFIG_ENV};
pub use consent::{attribute_digest, ConsentDecision, ConsentRecord, ConsentStore};

/// Prefix of the request entries that carry released attributes.
pub const ATTRIBUTE_HEADER_PREFIX: &str = "X-Fed-Attr-";

#[derive(Debug, Error)]
pub enum HookError {
    #[error(transparent)]
    Attributes(#[from] AttributeError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Execution(#[from] ExecutionError),
    #[error(transparent)]
    Store(#[from] LedgerError),
    #[error("invalid attribute file: {0}")]
    AttributeFile(String),
}

/// Settings derived from [`ServiceConfig`] once the mapping rules are loaded.
#[derive(Debug, Clone)]
pub struct HookSettings {
    pub hook_path: String,
    pub attributes: AttributeConfig,
    pub entitlements: EntitlementConfig,
    pub rules: MappingRules,
    pub consent_enabled: bool,
    pub require_entitlement: bool,
    pub abandon_url: String,
    pub consent_ttl: Duration,
}

impl HookSettings {
    pub fn consent_path(&self) -> String {
        format!("{}/consent", self.hook_path.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HookRequest {
    /// The `return` query parameter: where to resume the login sequence.
    pub return_url: Option<String>,
    pub attributes: BTreeMap<String, String>,
}

impl HookRequest {
    /// Builds a request from header pairs, keeping only `X-Fed-Attr-*`
    /// entries. Header names are matched case-insensitively and mapped back
    /// to the configured attribute spelling.
    pub fn from_headers<'a>(
        return_url: Option<String>,
        headers: impl IntoIterator<Item = (&'a str, &'a str)>,
        config: &AttributeConfig,
    ) -> Self {
        let prefix_len = ATTRIBUTE_HEADER_PREFIX.len();
        let mut attributes: BTreeMap<String, String> = BTreeMap::new();
        for (name, value) in headers {
            let Some(head) = name.get(..prefix_len) else { continue };
            if !head.eq_ignore_ascii_case(ATTRIBUTE_HEADER_PREFIX) {
                continue;
            }
            let attr = &name[prefix_len..];
            let attr = config.canonical_name(attr).unwrap_or(attr).to_owned();
            attributes
                .entry(attr)
                .and_modify(|v| {
                    v.push(MULTI_VALUE_SEPARATOR);
                    v.push_str(value);
                })
                .or_insert_with(|| value.to_owned());
        }
        Self {
            return_url,
            attributes,
        }
    }

    /// Same-host deployments: attributes arrive as environment entries
    /// named after the attributes themselves.
    pub fn from_env_map(return_url: Option<String>, env: BTreeMap<String, String>) -> Self {
        Self {
            return_url,
            attributes: env,
        }
    }
}

/// The POSTed consent form.
#[derive(Debug, Clone, PartialEq, Eq, serde::Deserialize)]
pub struct ConsentForm {
    pub challenge: String,
    pub decision: String,
    #[serde(rename = "return")]
    pub return_url: String,
    pub csrf_token: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HookResponse {
    /// 302 with `Location`.
    Redirect { location: String },
    /// 200 HTML page.
    Page { html: String },
    Error { status: u16, message: String },
}

impl HookResponse {
    pub fn status(&self) -> u16 {
        match self {
            HookResponse::Redirect { .. } => 302,
            HookResponse::Page { .. } => 200,
            HookResponse::Error { status, .. } => *status,
        }
    }

    pub fn location(&self) -> Option<&str> {
        match self {
            HookResponse::Redirect { location } => Some(location),
            _ => None,
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        HookResponse::Error {
            status,
            message: message.into(),
        }
    }
}

/// What happened while handling a request, for callers that observe more
/// than the HTTP response (the harness, logs).
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum HookEvent {
    Rejected {
        reason: String,
    },
    DeniedNoEntitlement {
        identifier: String,
    },
    ConsentRequested {
        challenge: String,
    },
    ConsentAbandoned,
    Provisioned {
        plan: ProvisioningPlan,
        steps: Vec<StepReport>,
    },
    ProvisioningFailed {
        plan: ProvisioningPlan,
        steps: Vec<StepReport>,
        error: String,
    },
}

#[derive(Debug, Clone)]
pub struct HookReply {
    pub response: HookResponse,
    pub event: HookEvent,
}

#[derive(Debug, Clone)]
struct Challenge {
    csrf_token: String,
    return_url: String,
    bundle: AttributeBundle,
    digest: String,
    desired: DesiredState,
    expires_at: DateTime<Utc>,
}

/// (name, domain_id) of a local user.
type UserKey = (String, String);

pub struct HookService {
    settings: HookSettings,
    backend: Arc<dyn IdentityBackend>,
    ledger: Arc<GrantsLedger>,
    consent: Arc<ConsentStore>,
    clock: Arc<dyn Clock>,
    tokens: TokenSource,
    challenges: Mutex<HashMap<String, Challenge>>,
    user_locks: Mutex<HashMap<UserKey, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for HookService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HookService")
            .field("settings", &self.settings)
            .finish_non_exhaustive()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn with_reason(base: &str, reason: &str) -> String {
    match url::Url::parse(base) {
        Ok(mut url) => {
            url.query_pairs_mut().append_pair("reason", reason);
            url.into()
        }
        Err(_) => base.to_owned(),
    }
}

impl HookService {
    pub fn new(
        settings: HookSettings,
        backend: Arc<dyn IdentityBackend>,
        ledger: Arc<GrantsLedger>,
        consent: Arc<ConsentStore>,
    ) -> Self {
        Self {
            settings,
            backend,
            ledger,
            consent,
            clock: Arc::new(SystemClock),
            tokens: TokenSource::from_entropy(),
            challenges: Mutex::new(HashMap::new()),
            user_locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_tokens(mut self, tokens: TokenSource) -> Self {
        self.tokens = tokens;
        self
    }

    pub fn settings(&self) -> &HookSettings {
        &self.settings
    }

    pub fn ledger(&self) -> &GrantsLedger {
        &self.ledger
    }

    pub fn backend(&self) -> &dyn IdentityBackend {
        self.backend.as_ref()
    }

    /// Attributes -> bundle -> local user -> desired state. No backend calls.
    pub fn desired_state(
        &self,
        attributes: &BTreeMap<String, String>,
    ) -> Result<(AttributeBundle, DesiredState), HookError> {
        let bundle = extract_bundle(attributes, &self.settings.attributes)?;
        let user = apply_rules(&self.settings.rules, &bundle, &self.settings.attributes)?;
        let desired = derive_desired_state(&bundle, user, &self.settings.entitlements);
        Ok((bundle, desired))
    }

    pub fn handle_session_hook(&self, request: &HookRequest) -> HookReply {
        let return_url = match request.return_url.as_deref().map(url::Url::parse) {
            Some(Ok(_)) => request.return_url.clone().unwrap_or_default(),
            Some(Err(e)) => return rejected(400, format!("return URL is not absolute: {e}")),
            None => return rejected(400, "missing `return` parameter"),
        };
        let (bundle, desired) = match self.desired_state(&request.attributes) {
            Ok(v) => v,
            Err(e) => return rejected(400, e.to_string()),
        };

        if self.settings.require_entitlement && desired.assignments.is_empty() {
            tracing::info!(identifier = %bundle.identifier, "login denied: no entitlement");
            return HookReply {
                response: HookResponse::Redirect {
                    location: with_reason(&self.settings.abandon_url, "no_entitlement"),
                },
                event: HookEvent::DeniedNoEntitlement {
                    identifier: bundle.identifier,
                },
            };
        }

        let digest = attribute_digest(&bundle);
        if self.settings.consent_enabled && !self.consent.is_accepted(&bundle.identifier, &digest)
        {
            return self.challenge(bundle, digest, desired, return_url);
        }
        self.provision(&desired, return_url)
    }

    fn challenge(
        &self,
        bundle: AttributeBundle,
        digest: String,
        desired: DesiredState,
        return_url: String,
    ) -> HookReply {
        let id = self.tokens.token();
        let csrf_token = self.tokens.token();
        let now = self.clock.now();
        let html = page::ConsentPage {
            bundle: &bundle,
            action: &self.settings.consent_path(),
            challenge: &id,
            csrf_token: &csrf_token,
            return_url: &return_url,
        }
        .render();
        let mut challenges = lock(&self.challenges);
        challenges.retain(|_, c| c.expires_at > now);
        challenges.insert(
            id.clone(),
            Challenge {
                csrf_token,
                return_url,
                bundle,
                digest,
                desired,
                expires_at: now + self.settings.consent_ttl,
            },
        );
        HookReply {
            response: HookResponse::Page { html },
            event: HookEvent::ConsentRequested { challenge: id },
        }
    }

    pub fn handle_consent_decision(&self, form: &ConsentForm) -> HookReply {
        let now = self.clock.now();
        let challenge = {
            let mut challenges = lock(&self.challenges);
            let Some(challenge) = challenges.get(&form.challenge) else {
                return rejected(410, "consent challenge unknown or already answered");
            };
            if challenge.expires_at <= now {
                challenges.remove(&form.challenge);
                return rejected(410, "consent challenge expired");
            }
            if challenge.csrf_token != form.csrf_token {
                return rejected(403, "CSRF token mismatch");
            }
            if challenge.return_url != form.return_url {
                return rejected(403, "return URL does not match the challenge");
            }
            let Some(challenge) = challenges.remove(&form.challenge) else {
                return rejected(410, "consent challenge unknown or already answered");
            };
            challenge
        };

        let decision = match form.decision.as_str() {
            "accept" => ConsentDecision::Accepted,
            "abandon" => ConsentDecision::Abandoned,
            other => return rejected(400, format!("unknown decision `{other}`")),
        };
        let record = ConsentRecord {
            identifier: challenge.bundle.identifier.clone(),
            attribute_digest: challenge.digest.clone(),
            decision,
            timestamp: now,
        };
        if let Err(e) = self.consent.record(record) {
            return rejected(500, e.to_string());
        }
        match decision {
            ConsentDecision::Accepted => self.provision(&challenge.desired, challenge.return_url),
            ConsentDecision::Abandoned => HookReply {
                response: HookResponse::Redirect {
                    location: with_reason(&self.settings.abandon_url, "consent_abandoned"),
                },
                event: HookEvent::ConsentAbandoned,
            },
        }
    }

    fn user_lock(&self, desired: &DesiredState) -> Arc<Mutex<()>> {
        let key = (desired.user.domain_id.clone(), desired.user.name.clone());
        Arc::clone(lock(&self.user_locks).entry(key).or_default())
    }

    /// Snapshot, plan, execute; redirect to `return_url` only on success.
    fn provision(&self, desired: &DesiredState, return_url: String) -> HookReply {
        let user_lock = self.user_lock(desired);
        let _serialized = lock(&user_lock);

        let snapshot = match user_snapshot(
            self.backend.as_ref(),
            &desired.user.name,
            &desired.user.domain_id,
        ) {
            Ok(s) => s,
            Err(e) => {
                return HookReply {
                    response: HookResponse::error(502, e.to_string()),
                    event: HookEvent::ProvisioningFailed {
                        plan: ProvisioningPlan::default(),
                        steps: vec![],
                        error: e.to_string(),
                    },
                }
            }
        };
        let plan = compute_plan(&snapshot, desired, &self.ledger);
        let report = execute_plan(&plan, self.backend.as_ref(), &self.ledger);
        match report.error {
            None => {
                tracing::info!(user = %desired.user.name, steps = plan.len(), "provisioned");
                HookReply {
                    response: HookResponse::Redirect {
                        location: return_url,
                    },
                    event: HookEvent::Provisioned {
                        plan,
                        steps: report.steps,
                    },
                }
            }
            Some(e) => {
                let status = match e {
                    ExecutionError::Backend(_) => 502,
                    _ => 500,
                };
                HookReply {
                    response: HookResponse::error(status, e.to_string()),
                    event: HookEvent::ProvisioningFailed {
                        plan,
                        steps: report.steps,
                        error: e.to_string(),
                    },
                }
            }
        }
    }
}

fn rejected(status: u16, message: impl Into<String>) -> HookReply {
    let message = message.into();
    HookReply {
        response: HookResponse::error(status, message.clone()),
        event: HookEvent::Rejected { reason: message },
    }
}

/// Result of a dry run: what a login with these attributes would do.
#[derive(Debug, Clone, Serialize)]
pub struct DryRun {
    pub desired: DesiredState,
    pub plan: ProvisioningPlan,
    /// Set when the login would be refused before any backend mutation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denied: Option<String>,
}

/// Reads an attribute file: a JSON object mapping attribute names to a
/// string or a list of strings (multi-valued).
pub fn parse_attribute_file(text: &str) -> Result<BTreeMap<String, String>, HookError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| HookError::AttributeFile(e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| HookError::AttributeFile("expected a JSON object".into()))?;
    object
        .iter()
        .map(|(name, v)| {
            let value = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|i| {
                        i.as_str().map(str::to_owned).ok_or_else(|| {
                            HookError::AttributeFile(format!("`{name}`: values must be strings"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?
                    .join(";"),
                _ => {
                    return Err(HookError::AttributeFile(format!(
                        "`{name}`: expected a string or a list of strings"
                    )))
                }
            };
            Ok((name.clone(), value))
        })
        .collect()
}

/// Computes the plan a login with `attributes` would execute, without
/// mutating anything. Only list operations reach the backend.
pub fn dry_run_plan(
    attributes: &BTreeMap<String, String>,
    settings: &HookSettings,
    backend: &dyn IdentityBackend,
    ledger: &GrantsLedger,
) -> Result<DryRun, HookError> {
    let bundle = extract_bundle(attributes, &settings.attributes)?;
    let user = apply_rules(&settings.rules, &bundle, &settings.attributes)?;
    let desired = derive_desired_state(&bundle, user, &settings.entitlements);
    if settings.require_entitlement && desired.assignments.is_empty() {
        return Ok(DryRun {
            desired,
            plan: ProvisioningPlan::default(),
            denied: Some("no_entitlement".into()),
        });
    }
    let snapshot = user_snapshot(backend, &desired.user.name, &desired.user.domain_id)?;
    let plan = compute_plan(&snapshot, &desired, ledger);
    Ok(DryRun {
        desired,
        plan,
        denied: None,
    })
}

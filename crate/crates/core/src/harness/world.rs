//! The simulated federation. Every entity is a handler from a browser
//! request to a response, dispatched by host. SAML messages are not
//! serialized: assertions and relay states are opaque handles into the
//! world's state, and trust is scenario configuration.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use url::Url;

use super::scenario::{AttrMap, Scenario};
use super::trace::{Action, Actor, Outcome, TraceEvent, WorkflowStep};
use super::{HarnessError, DISCOVERY_HOST, HORIZON_HOST, KEYSTONE_HOST, MAX_PRACTICAL_AAS};
use crate::attributes::{extract_bundle, MULTI_VALUE_SEPARATOR};
use crate::backend::{
    BackendUser, FaultyBackend, IdentityBackend, MockBackend, Operation, RecordingBackend,
};
use crate::clock::{SimClock, TokenSource};
use crate::hook::{
    ConsentForm, ConsentStore, HookEvent, HookReply, HookRequest, HookResponse, HookService,
    HookSettings, ATTRIBUTE_HEADER_PREFIX,
};
use crate::mapping::apply_rules;
use crate::planner::{GrantsLedger, PlanStep, ProvisioningPlan, StepOutcome, StepReport};

pub(crate) const WEBSSO_PATH: &str = "/v3/auth/OS-FEDERATION/websso/saml2";
const SP_LOGIN_PATH: &str = "/Shibboleth.sso/Login";
const SP_ACS_PATH: &str = "/Shibboleth.sso/SAML2/POST";
const SP_HOOK_RETURN_PATH: &str = "/Shibboleth.sso/SessionHookReturn";
const SP_SESSION_COOKIE: &str = "_shibsession";
const HORIZON_SESSION_COOKIE: &str = "sessionid";
const HORIZON_WEBSSO_PATH: &str = "/auth/websso/";
const IDP_SSO_PATH: &str = "/idp/profile/SAML2/Redirect/SSO";
const IDP_LOGIN_PATH: &str = "/idp/login";

fn https(host: &str, path: &str) -> Url {
    Url::parse(&format!("https://{host}{path}")).expect("static URLs parse")
}

fn with_query(mut url: Url, pairs: &[(&str, &str)]) -> Url {
    {
        let mut q = url.query_pairs_mut();
        for (k, v) in pairs {
            q.append_pair(k, v);
        }
    }
    url
}

fn query(url: &Url, name: &str) -> Option<String> {
    url.query_pairs()
        .find(|(k, _)| k == name)
        .map(|(_, v)| v.into_owned())
}

pub(crate) fn sp_entity_id() -> String {
    https(KEYSTONE_HOST, "/shibboleth").into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone)]
pub(crate) struct Request {
    pub method: Method,
    pub url: Url,
    pub form: BTreeMap<String, String>,
    pub cookies: BTreeMap<String, String>,
}

impl Request {
    pub fn get(url: Url) -> Self {
        Self {
            method: Method::Get,
            url,
            form: BTreeMap::new(),
            cookies: BTreeMap::new(),
        }
    }

    pub fn post(url: Url, form: BTreeMap<String, String>) -> Self {
        Self {
            method: Method::Post,
            url,
            form,
            cookies: BTreeMap::new(),
        }
    }

    fn field(&self, name: &str) -> Option<String> {
        match self.method {
            Method::Get => query(&self.url, name),
            Method::Post => self.form.get(name).cloned(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Page {
    Discovery { idps: Vec<String>, select: Url },
    IdpLogin { action: Url },
    Consent { html: String, action: Url },
    Dashboard,
    Landing { reason: Option<String> },
}

#[derive(Debug, Clone)]
pub(crate) enum Response {
    Redirect(Url),
    /// A self-submitting form (SAML POST binding, Keystone's token post).
    AutoPost { action: Url, form: BTreeMap<String, String> },
    Page(Page),
    Error { status: u16, message: String, outcome: Outcome },
}

#[derive(Debug)]
pub(crate) struct Reply {
    pub response: Response,
    pub cookies: Vec<(String, String)>,
}

impl From<Response> for Reply {
    fn from(response: Response) -> Self {
        Reply {
            response,
            cookies: Vec::new(),
        }
    }
}

fn error(status: u16, message: impl Into<String>, outcome: Outcome) -> Reply {
    Response::Error {
        status,
        message: message.into(),
        outcome,
    }
    .into()
}

/// Keystone's token side: issues opaque tokens for users that exist in the
/// backend, and validates them for Horizon.
#[derive(Debug)]
pub struct MockKeystone {
    backend: Arc<MockBackend>,
    tokens: TokenSource,
    issued: Mutex<HashMap<String, String>>,
}

impl MockKeystone {
    pub fn new(backend: Arc<MockBackend>, tokens: TokenSource) -> Self {
        Self {
            backend,
            tokens,
            issued: Mutex::new(HashMap::new()),
        }
    }

    pub fn simulate_token_issue(&self, name: &str, domain_id: &str) -> Result<String, HarnessError> {
        let user = self
            .backend
            .find_user(name, domain_id)
            .filter(|u| u.enabled)
            .ok_or_else(|| HarnessError::UnknownUser {
                name: name.to_owned(),
                domain_id: domain_id.to_owned(),
            })?;
        let token = self.tokens.token();
        self.issued
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(token.clone(), user.id);
        Ok(token)
    }

    pub fn validate_token(&self, token: &str) -> Option<BackendUser> {
        let id = self
            .issued
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(token)
            .cloned()?;
        self.backend.user_by_id(&id)
    }
}

pub(crate) type HookBackend = RecordingBackend<FaultyBackend<Arc<MockBackend>>>;

#[derive(Debug)]
struct SpSession {
    attributes: BTreeMap<String, String>,
    hook_done: bool,
}

/// Per-login observations.
#[derive(Debug, Default)]
pub(crate) struct Observed {
    pub events: Vec<TraceEvent>,
    pub warnings: Vec<String>,
    pub aa_latency_ms: u64,
    pub backend_operations: Vec<Operation>,
    pub plan: Option<ProvisioningPlan>,
}

pub(crate) struct World {
    pub scenario: Scenario,
    pub settings: HookSettings,
    pub clock: Arc<SimClock>,
    pub mock: Arc<MockBackend>,
    pub recorder: Arc<HookBackend>,
    pub hook: HookService,
    pub keystone: MockKeystone,
    pub consent: Arc<ConsentStore>,
    pub ledger: Arc<GrantsLedger>,
    handles: TokenSource,
    relay_states: HashMap<String, String>,
    assertions: HashMap<String, (String, String)>,
    sp_sessions: HashMap<String, SpSession>,
    horizon_sessions: HashMap<String, String>,
    pub observed: Observed,
}

impl World {
    pub fn new(scenario: Scenario, settings: HookSettings, seed: u64) -> Self {
        let clock = Arc::new(SimClock::new());
        let mock = Arc::new(MockBackend::new());
        let behavior = scenario.backend.clone().unwrap_or_default();
        let faulty = match (behavior.available, behavior.fail_after) {
            (false, _) => FaultyBackend::unavailable(Arc::clone(&mock)),
            (true, Some(n)) => FaultyBackend::fail_after(Arc::clone(&mock), n),
            (true, None) => FaultyBackend::healthy(Arc::clone(&mock)),
        };
        let recorder = Arc::new(RecordingBackend::new(faulty));
        let ledger = Arc::new(GrantsLedger::in_memory());
        let consent = Arc::new(ConsentStore::in_memory());
        let hook = HookService::new(
            settings.clone(),
            Arc::clone(&recorder) as Arc<dyn IdentityBackend>,
            Arc::clone(&ledger),
            Arc::clone(&consent),
        )
        .with_clock(Arc::clone(&clock) as _)
        .with_tokens(TokenSource::seeded(seed ^ 0x686f_6f6b));
        let keystone = MockKeystone::new(
            Arc::clone(&mock),
            TokenSource::seeded(seed ^ 0x6b65_7973),
        );
        Self {
            scenario,
            settings,
            clock,
            mock,
            recorder,
            hook,
            keystone,
            consent,
            ledger,
            handles: TokenSource::seeded(seed),
            relay_states: HashMap::new(),
            assertions: HashMap::new(),
            sp_sessions: HashMap::new(),
            horizon_sessions: HashMap::new(),
            observed: Observed::default(),
        }
    }

    pub fn emit(&mut self, step: Option<WorkflowStep>, actor: Actor, action: Action) {
        self.observed.events.push(TraceEvent {
            step,
            actor,
            action,
            sim_time_ms: self.clock.elapsed_ms(),
        });
    }

    pub fn horizon_url() -> Url {
        https(HORIZON_HOST, "/")
    }

    pub fn handle(&mut self, request: &Request) -> Reply {
        let host = request.url.host_str().unwrap_or_default().to_owned();
        match host.as_str() {
            HORIZON_HOST => self.horizon(request),
            KEYSTONE_HOST => self.keystone_host(request),
            DISCOVERY_HOST => self.discovery(request),
            _ => match self.idp_by_host(&host) {
                Some(entity_id) => self.idp(&entity_id, request),
                None => self.portal(request),
            },
        }
    }

    fn idp_by_host(&self, host: &str) -> Option<String> {
        self.scenario
            .entities
            .idps
            .iter()
            .find(|i| Url::parse(&i.entity_id).ok().and_then(|u| u.host_str().map(str::to_owned)).as_deref() == Some(host))
            .map(|i| i.entity_id.clone())
    }

    fn horizon(&mut self, request: &Request) -> Reply {
        match request.url.path() {
            HORIZON_WEBSSO_PATH => {
                let token = request.field("token").unwrap_or_default();
                let Some(user) = self.keystone.validate_token(&token) else {
                    return error(401, "invalid token", Outcome::KeystoneDenied);
                };
                let session = self.handles.token();
                self.horizon_sessions.insert(session.clone(), user.name.clone());
                self.emit(
                    Some(WorkflowStep::Xiii),
                    Actor::Horizon,
                    Action::HorizonSession { user: user.name },
                );
                Reply {
                    response: Response::Redirect(Self::horizon_url()),
                    cookies: vec![(HORIZON_SESSION_COOKIE.into(), session)],
                }
            }
            _ => {
                let logged_in = request
                    .cookies
                    .get(HORIZON_SESSION_COOKIE)
                    .is_some_and(|s| self.horizon_sessions.contains_key(s));
                if logged_in {
                    self.emit(
                        Some(WorkflowStep::Xiii),
                        Actor::Horizon,
                        Action::Landed {
                            url: request.url.to_string(),
                        },
                    );
                    return Response::Page(Page::Dashboard).into();
                }
                let origin = https(HORIZON_HOST, HORIZON_WEBSSO_PATH);
                let location = with_query(
                    https(KEYSTONE_HOST, WEBSSO_PATH),
                    &[("origin", origin.as_str())],
                );
                self.emit(
                    Some(WorkflowStep::Ii),
                    Actor::Horizon,
                    Action::Redirect {
                        location: location.to_string(),
                    },
                );
                Response::Redirect(location).into()
            }
        }
    }

    fn sp_session(&self, request: &Request) -> Option<&SpSession> {
        request
            .cookies
            .get(SP_SESSION_COOKIE)
            .and_then(|id| self.sp_sessions.get(id))
    }

    fn keystone_host(&mut self, request: &Request) -> Reply {
        let path = request.url.path().to_owned();
        let consent_path = self.settings.consent_path();
        match path.as_str() {
            WEBSSO_PATH => self.websso(request),
            SP_LOGIN_PATH => self.sp_login(request),
            SP_ACS_PATH => self.sp_acs(request),
            SP_HOOK_RETURN_PATH => self.sp_hook_return(request),
            p if p == consent_path && request.method == Method::Post => self.hook_consent(request),
            p if p == self.settings.hook_path => self.hook_session(request),
            _ => error(404, format!("no handler for {path}"), Outcome::HookRejected),
        }
    }

    fn discovery_redirect(&mut self, target: &Url) -> Reply {
        let return_to = with_query(
            https(KEYSTONE_HOST, SP_LOGIN_PATH),
            &[("target", target.as_str())],
        );
        let location = with_query(
            https(DISCOVERY_HOST, "/ds"),
            &[("entityID", &sp_entity_id()), ("return", return_to.as_str())],
        );
        self.emit(
            Some(WorkflowStep::Iii),
            Actor::KeystoneSp,
            Action::Redirect {
                location: location.to_string(),
            },
        );
        Response::Redirect(location).into()
    }

    fn hook_redirect(&mut self, target: &str) -> Reply {
        let return_to = with_query(
            https(KEYSTONE_HOST, SP_HOOK_RETURN_PATH),
            &[("target", target)],
        );
        let location = with_query(
            https(KEYSTONE_HOST, &self.settings.hook_path),
            &[("return", return_to.as_str())],
        );
        self.emit(
            Some(WorkflowStep::Vii),
            Actor::KeystoneSp,
            Action::SessionHook {
                location: location.to_string(),
            },
        );
        Response::Redirect(location).into()
    }

    fn websso(&mut self, request: &Request) -> Reply {
        let Some(session) = self.sp_session(request) else {
            return self.discovery_redirect(&request.url);
        };
        if !session.hook_done {
            return self.hook_redirect(request.url.as_str());
        }
        // Same attributes as the hook saw, as an environment map.
        let env = session.attributes.clone();
        self.emit(
            Some(WorkflowStep::X),
            Actor::KeystoneSp,
            Action::AttributesDelivered {
                attributes: env.keys().cloned().collect(),
            },
        );
        let user = extract_bundle(&env, &self.settings.attributes)
            .map_err(|e| e.to_string())
            .and_then(|bundle| {
                apply_rules(&self.settings.rules, &bundle, &self.settings.attributes)
                    .map_err(|e| e.to_string())
            });
        let user = match user {
            Ok(user) => user,
            Err(message) => {
                self.emit(
                    Some(WorkflowStep::Xi),
                    Actor::Keystone,
                    Action::KeystoneAuthFailed {
                        user: String::new(),
                    },
                );
                return error(401, message, Outcome::KeystoneDenied);
            }
        };
        let token = match self.keystone.simulate_token_issue(&user.name, &user.domain_id) {
            Ok(token) => token,
            Err(e) => {
                self.emit(
                    Some(WorkflowStep::Xi),
                    Actor::Keystone,
                    Action::KeystoneAuthFailed { user: user.name },
                );
                return error(401, e.to_string(), Outcome::KeystoneDenied);
            }
        };
        self.emit(
            Some(WorkflowStep::Xi),
            Actor::Keystone,
            Action::KeystoneAuth {
                user: user.name.clone(),
            },
        );
        self.emit(
            Some(WorkflowStep::Xii),
            Actor::Keystone,
            Action::TokenIssued {
                user: user.name,
                token: token.clone(),
            },
        );
        let origin = query(&request.url, "origin")
            .and_then(|o| Url::parse(&o).ok())
            .unwrap_or_else(|| https(HORIZON_HOST, HORIZON_WEBSSO_PATH));
        self.emit(
            Some(WorkflowStep::Xiii),
            Actor::Keystone,
            Action::Redirect {
                location: origin.to_string(),
            },
        );
        Response::AutoPost {
            action: origin,
            form: BTreeMap::from([("token".to_owned(), token)]),
        }
        .into()
    }

    fn sp_login(&mut self, request: &Request) -> Reply {
        let target = query(&request.url, "target").unwrap_or_default();
        let Some(entity_id) = query(&request.url, "entityID") else {
            let target = Url::parse(&target).unwrap_or_else(|_| https(KEYSTONE_HOST, WEBSSO_PATH));
            return self.discovery_redirect(&target);
        };
        // The SP only talks to IdPs in the federation metadata.
        let trusted = self.scenario.idp(&entity_id).is_some_and(|i| i.listed);
        if !trusted {
            return error(
                403,
                format!("IdP {entity_id} is not in the federation metadata"),
                Outcome::DiscoveryRefused,
            );
        }
        let relay = self.handles.token();
        self.relay_states.insert(relay.clone(), target);
        let sso = Url::parse(&entity_id)
            .and_then(|u| u.join(IDP_SSO_PATH))
            .expect("validated entity ids are absolute");
        let location = with_query(sso, &[("SAMLRequest", &relay), ("RelayState", &relay)]);
        self.emit(
            Some(WorkflowStep::Iv),
            Actor::KeystoneSp,
            Action::Redirect {
                location: location.to_string(),
            },
        );
        Response::Redirect(location).into()
    }

    fn discovery(&mut self, request: &Request) -> Reply {
        let return_to = request.field("return").unwrap_or_default();
        match request.url.path() {
            "/ds/select" => {
                let idp = request.field("entityID").unwrap_or_default();
                if !self.scenario.idp(&idp).is_some_and(|i| i.listed) {
                    self.emit(
                        Some(WorkflowStep::Iv),
                        Actor::Discovery,
                        Action::DiscoveryRefused { idp: idp.clone() },
                    );
                    return error(
                        403,
                        format!("{idp} is not a member of the federation"),
                        Outcome::DiscoveryRefused,
                    );
                }
                let Ok(return_to) = Url::parse(&return_to) else {
                    return error(400, "invalid return URL", Outcome::DiscoveryRefused);
                };
                let location = with_query(return_to, &[("entityID", &idp)]);
                self.emit(
                    Some(WorkflowStep::Iv),
                    Actor::Discovery,
                    Action::Redirect {
                        location: location.to_string(),
                    },
                );
                Response::Redirect(location).into()
            }
            _ => {
                let idps: Vec<String> = self
                    .scenario
                    .entities
                    .idps
                    .iter()
                    .filter(|i| i.listed)
                    .map(|i| i.entity_id.clone())
                    .collect();
                self.emit(
                    Some(WorkflowStep::Iii),
                    Actor::Discovery,
                    Action::DiscoveryPage { idps: idps.clone() },
                );
                let select = with_query(
                    https(DISCOVERY_HOST, "/ds/select"),
                    &[("return", &return_to)],
                );
                Response::Page(Page::Discovery { idps, select }).into()
            }
        }
    }

    fn idp(&mut self, entity_id: &str, request: &Request) -> Reply {
        let actor = Actor::Idp(entity_id.to_owned());
        let relay = request.field("RelayState").unwrap_or_default();
        match request.url.path() {
            IDP_SSO_PATH => {
                self.emit(Some(WorkflowStep::V), actor, Action::LoginPage);
                let action = with_query(
                    Url::parse(entity_id).and_then(|u| u.join(IDP_LOGIN_PATH)).expect("absolute"),
                    &[("RelayState", &relay)],
                );
                Response::Page(Page::IdpLogin { action }).into()
            }
            IDP_LOGIN_PATH if request.method == Method::Post => {
                let relay = query(&request.url, "RelayState").unwrap_or_default();
                let username = request.field("username").unwrap_or_default();
                if self
                    .scenario
                    .principals
                    .iter()
                    .all(|p| p.idp != entity_id || p.username != username)
                {
                    return error(401, "unknown principal", Outcome::Stalled);
                }
                let latency = self.scenario.idp(entity_id).map_or(0, |i| i.latency_ms);
                self.clock.advance(latency);
                self.emit(
                    Some(WorkflowStep::V),
                    actor.clone(),
                    Action::IdpLogin {
                        principal: username.clone(),
                    },
                );
                let assertion = self.handles.token();
                self.assertions
                    .insert(assertion.clone(), (entity_id.to_owned(), username));
                let action = https(KEYSTONE_HOST, SP_ACS_PATH);
                self.emit(
                    Some(WorkflowStep::V),
                    actor,
                    Action::Redirect {
                        location: action.to_string(),
                    },
                );
                Response::AutoPost {
                    action,
                    form: BTreeMap::from([
                        ("SAMLResponse".to_owned(), assertion),
                        ("RelayState".to_owned(), relay),
                    ]),
                }
                .into()
            }
            _ => error(404, "no such IdP endpoint", Outcome::Stalled),
        }
    }

    /// Assertion consumer: sequential attribute queries, merge and filter,
    /// session creation, then the session hook.
    fn sp_acs(&mut self, request: &Request) -> Reply {
        let assertion = request.field("SAMLResponse").unwrap_or_default();
        let relay = request.field("RelayState").unwrap_or_default();
        let (Some((idp, username)), Some(target)) = (
            self.assertions.remove(&assertion),
            self.relay_states.remove(&relay),
        ) else {
            return error(400, "unsolicited or replayed assertion", Outcome::Stalled);
        };
        let Some(principal) = self
            .scenario
            .principals
            .iter()
            .find(|p| p.idp == idp && p.username == username)
            .cloned()
        else {
            return error(400, "assertion for unknown principal", Outcome::Stalled);
        };

        let config = self.settings.attributes.clone();
        let identifier = principal
            .attributes
            .iter()
            .find(|(k, _)| config.canonical_name(k) == Some(config.identifier_attr.as_str()))
            .and_then(|(_, v)| v.values().into_iter().next());

        let chain = self.scenario.aa_chain.clone();
        let total: u64 = chain.iter().map(|a| a.latency_ms).sum();
        self.emit(
            Some(WorkflowStep::Vi),
            Actor::KeystoneSp,
            Action::AttributeQueryPhase {
                authorities: chain.len(),
            },
        );
        if chain.len() > MAX_PRACTICAL_AAS {
            self.observed.warnings.push(format!(
                "{} attribute authorities queried sequentially block the user for {total} ms; more than {MAX_PRACTICAL_AAS} is not practical",
                chain.len()
            ));
        }
        let mut sources: Vec<AttrMap> = vec![principal.attributes.clone()];
        for aa in &chain {
            self.clock.advance(aa.latency_ms);
            self.observed.aa_latency_ms += aa.latency_ms;
            let released = identifier
                .as_ref()
                .and_then(|id| aa.attributes.get(id))
                .cloned()
                .unwrap_or_default();
            self.emit(
                Some(WorkflowStep::Vi),
                Actor::Aa(aa.name.clone()),
                Action::AttributeQuery {
                    authority: aa.name.clone(),
                    latency_ms: aa.latency_ms,
                    released: released.len(),
                },
            );
            sources.push(released);
        }

        // Merge in IdP-then-AA order and keep only attributes the hook
        // consumes.
        let mut merged: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for source in sources {
            for (name, value) in source {
                if let Some(canonical) = config.canonical_name(&name) {
                    merged
                        .entry(canonical.to_owned())
                        .or_default()
                        .extend(value.values());
                }
            }
        }
        let attributes: BTreeMap<String, String> = merged
            .into_iter()
            .map(|(k, v)| (k, v.join(&MULTI_VALUE_SEPARATOR.to_string())))
            .collect();
        self.emit(
            Some(WorkflowStep::Vii),
            Actor::KeystoneSp,
            Action::AttributesMerged {
                attributes: attributes.keys().cloned().collect(),
            },
        );
        let session = self.handles.token();
        self.sp_sessions.insert(
            session.clone(),
            SpSession {
                attributes,
                hook_done: false,
            },
        );
        let mut reply = self.hook_redirect(&target);
        reply.cookies.push((SP_SESSION_COOKIE.into(), session));
        reply
    }

    fn sp_hook_return(&mut self, request: &Request) -> Reply {
        let Some(id) = request.cookies.get(SP_SESSION_COOKIE) else {
            return error(403, "no SP session", Outcome::HookRejected);
        };
        let Some(session) = self.sp_sessions.get_mut(id) else {
            return error(403, "no SP session", Outcome::HookRejected);
        };
        session.hook_done = true;
        let Some(target) = query(&request.url, "target").and_then(|t| Url::parse(&t).ok()) else {
            return error(400, "missing target", Outcome::HookRejected);
        };
        self.emit(
            Some(WorkflowStep::X),
            Actor::KeystoneSp,
            Action::Redirect {
                location: target.to_string(),
            },
        );
        Response::Redirect(target).into()
    }

    fn hook_session(&mut self, request: &Request) -> Reply {
        let Some(session) = self.sp_session(request) else {
            return error(403, "the hook is only reachable with an SP session", Outcome::HookRejected);
        };
        let headers: Vec<(String, String)> = session
            .attributes
            .iter()
            .map(|(k, v)| (format!("{ATTRIBUTE_HEADER_PREFIX}{k}"), v.clone()))
            .collect();
        let hook_request = HookRequest::from_headers(
            query(&request.url, "return"),
            headers.iter().map(|(k, v)| (k.as_str(), v.as_str())),
            &self.settings.attributes,
        );
        let before = self.recorder.call_count();
        let reply = self.hook.handle_session_hook(&hook_request);
        self.hook_reply(reply, before)
    }

    fn hook_consent(&mut self, request: &Request) -> Reply {
        let field = |name| request.form.get(name).cloned().unwrap_or_default();
        let form = ConsentForm {
            challenge: field("challenge"),
            decision: field("decision"),
            return_url: field("return"),
            csrf_token: field("csrf_token"),
        };
        let before = self.recorder.call_count();
        let reply = self.hook.handle_consent_decision(&form);
        self.hook_reply(reply, before)
    }

    fn record_provisioning(&mut self, plan: &ProvisioningPlan, steps: &[StepReport], ops: &[Operation]) {
        let created_user = steps.iter().find_map(|r| match (&r.step, &r.outcome) {
            (
                PlanStep::CreateUser { name, .. },
                StepOutcome::Applied | StepOutcome::ConflictResolved,
            ) => Some(name.clone()),
            _ => None,
        });
        let planning = ops.iter().take_while(|op| !op.is_mutation()).count();
        let viii = Some(WorkflowStep::Viii);
        for op in &ops[..planning] {
            self.emit(viii, Actor::HookService, Action::BackendCall { operation: *op });
        }
        self.emit(
            viii,
            Actor::HookService,
            Action::PlanComputed { steps: plan.len() },
        );
        for op in &ops[planning..] {
            self.emit(viii, Actor::HookService, Action::BackendCall { operation: *op });
            if *op == Operation::UsersCreate {
                if let Some(user) = &created_user {
                    self.emit(
                        viii,
                        Actor::HookService,
                        Action::CreateUser { user: user.clone() },
                    );
                }
            }
        }
        self.observed.plan = Some(plan.clone());
    }

    fn hook_reply(&mut self, reply: HookReply, before: usize) -> Reply {
        let ops = self.recorder.calls_since(before);
        self.observed.backend_operations.extend(ops.iter().copied());
        match &reply.event {
            HookEvent::Provisioned { plan, steps }
            | HookEvent::ProvisioningFailed { plan, steps, .. } => {
                self.record_provisioning(plan, steps, &ops)
            }
            _ => {
                for op in &ops {
                    self.emit(None, Actor::HookService, Action::BackendCall { operation: *op });
                }
            }
        }
        match reply.response {
            HookResponse::Page { html } => {
                self.emit(Some(WorkflowStep::Vii), Actor::HookService, Action::ConsentPage);
                let action = https(KEYSTONE_HOST, &self.settings.consent_path());
                Response::Page(Page::Consent { html, action }).into()
            }
            HookResponse::Redirect { location } => {
                let (step, action) = match &reply.event {
                    HookEvent::Provisioned { .. } => (
                        Some(WorkflowStep::Ix),
                        Action::HookResumed {
                            location: location.clone(),
                        },
                    ),
                    HookEvent::DeniedNoEntitlement { .. } => (
                        None,
                        Action::HookDenied {
                            reason: "no_entitlement".into(),
                        },
                    ),
                    _ => (
                        None,
                        Action::HookDenied {
                            reason: "consent_abandoned".into(),
                        },
                    ),
                };
                self.emit(step, Actor::HookService, action);
                match Url::parse(&location) {
                    Ok(url) => Response::Redirect(url).into(),
                    Err(e) => error(502, e.to_string(), Outcome::HookRejected),
                }
            }
            HookResponse::Error { status, message } => {
                let provisioning = matches!(reply.event, HookEvent::ProvisioningFailed { .. });
                self.emit(
                    provisioning.then_some(WorkflowStep::Viii),
                    Actor::HookService,
                    Action::HookFailed {
                        status,
                        message: message.clone(),
                    },
                );
                let outcome = if provisioning || status >= 500 {
                    Outcome::BackendError
                } else {
                    Outcome::HookRejected
                };
                error(status, message, outcome)
            }
        }
    }

    fn portal(&mut self, request: &Request) -> Reply {
        self.emit(
            None,
            Actor::Portal,
            Action::Landed {
                url: request.url.to_string(),
            },
        );
        Response::Page(Page::Landing {
            reason: query(&request.url, "reason"),
        })
        .into()
    }
}

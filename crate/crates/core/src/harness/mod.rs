//! Deterministic simulation of the federated login.
//!
//! A scripted browser starts at Horizon and follows redirects through the
//! SP guarding Keystone, the discovery service, the IdP, the attribute
//! authorities and the session hook until it lands somewhere terminal.
//! Time is a simulated clock advanced by entity latencies, so latency
//! figures are exact and runs are reproducible from the seed.

use std::collections::{BTreeMap, HashMap};

use chrono::Duration;
use thiserror::Error;
use url::Url;

mod assert;
mod scenario;
mod trace;
mod world;

pub use assert::{assert_trace, Expectations, Violation};
pub use scenario::{
    AttrMap, AttrValue, AttributeAuthority, BackendBehavior, ConfigOverrides, ConsentChoice,
    Entities, IdpEntity, Login, Principal, Scenario,
};
pub use trace::{Action, Actor, Outcome, ScenarioTrace, TraceEvent, WorkflowStep};
pub use world::MockKeystone;

use crate::backend::{IdentityBackend, MockBackend};
use crate::entitlement::EntitlementConfig;
use crate::hook::{ConsentStore, HookSettings};
use crate::mapping::{parse_mapping_rules, LocalUserSpec};
use crate::planner::GrantsLedger;
use world::{Page, Request, Response, World};

pub const HORIZON_HOST: &str = "horizon.cloud.example";
pub const KEYSTONE_HOST: &str = "keystone.cloud.example";
pub const DISCOVERY_HOST: &str = "ds.federation.example";
pub const DEFAULT_ABANDON_URL: &str = "https://portal.federation.example/abandoned";
pub const DEFAULT_ENTITLEMENT_PREFIX: &str = "urn:mace:federation.example:cloud";
pub const DEFAULT_MAPPING: &str = r#"{"mapping":{"rules":[{"local":[{"user":{"domain":{"id":"default"},"type":"local","name":"{0}"}}],"remote":[{"type":"eppn"}]}]}}"#;

/// Beyond this many sequentially queried attribute authorities a login
/// carries a practicality warning.
pub const MAX_PRACTICAL_AAS: usize = 5;

/// Redirect budget for one login.
pub const MAX_HOPS: usize = 64;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("unknown user `{name}` in domain `{domain_id}`")]
    UnknownUser { name: String, domain_id: String },
}

/// Hook settings for a scenario: harness defaults plus overrides.
pub fn scenario_settings(scenario: &Scenario) -> Result<HookSettings, HarnessError> {
    let o = &scenario.config_overrides;
    let invalid = |e: String| HarnessError::Scenario(e);
    let rules = match &o.mapping_rules {
        Some(doc) => parse_mapping_rules(&doc.to_string()),
        None => parse_mapping_rules(DEFAULT_MAPPING),
    }
    .map_err(|e| invalid(e.to_string()))?;
    let entitlements = EntitlementConfig {
        entitlement_prefix: o
            .entitlement_prefix
            .clone()
            .unwrap_or_else(|| DEFAULT_ENTITLEMENT_PREFIX.into()),
        require_prefix_match: o.require_prefix_match.unwrap_or(true),
    };
    entitlements.validate().map_err(|e| invalid(e.to_string()))?;
    let abandon_url = o
        .abandon_url
        .clone()
        .unwrap_or_else(|| DEFAULT_ABANDON_URL.into());
    Url::parse(&abandon_url).map_err(|e| invalid(format!("abandon_url: {e}")))?;
    Ok(HookSettings {
        hook_path: o.hook_path.clone().unwrap_or_else(|| "/regsite".into()),
        attributes: o.attributes.clone().unwrap_or_default(),
        entitlements,
        rules,
        consent_enabled: o.consent_enabled.unwrap_or(true),
        require_entitlement: o.require_entitlement.unwrap_or(true),
        abandon_url,
        consent_ttl: Duration::seconds(600),
    })
}

/// One simulated federation. Backend, ledger and consent store persist
/// across logins; every login uses a fresh browser.
pub struct Harness {
    world: World,
    seed: u64,
}

impl Harness {
    pub fn new(scenario: Scenario, seed: u64) -> Result<Self, HarnessError> {
        scenario.validate()?;
        let settings = scenario_settings(&scenario)?;
        let domain_id = settings
            .rules
            .rules
            .first()
            .and_then(|r| r.local.first())
            .map_or_else(|| "default".to_owned(), |l| l.user.domain.id.clone());
        let world = World::new(scenario, settings, seed);
        for name in &world.scenario.preexisting_users {
            let spec = LocalUserSpec {
                name: name.clone(),
                domain_id: domain_id.clone(),
                user_type: "local".into(),
            };
            world
                .mock
                .users_create(&spec, None)
                .map_err(|e| HarnessError::Scenario(format!("preexisting user `{name}`: {e}")))?;
        }
        Ok(Self { world, seed })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.world.scenario
    }

    /// Changes what a principal's IdP releases on later logins.
    pub fn principal_mut(&mut self, username: &str) -> Option<&mut Principal> {
        self.world
            .scenario
            .principals
            .iter_mut()
            .find(|p| p.username == username)
    }

    pub fn backend(&self) -> &MockBackend {
        &self.world.mock
    }

    pub fn keystone(&self) -> &MockKeystone {
        &self.world.keystone
    }

    pub fn consent_store(&self) -> &ConsentStore {
        &self.world.consent
    }

    pub fn ledger(&self) -> &GrantsLedger {
        &self.world.ledger
    }

    /// Every backend operation the hook service has invoked so far.
    pub fn backend_calls(&self) -> Vec<crate::backend::Operation> {
        self.world.recorder.calls()
    }

    /// Runs the scenario's own login.
    pub fn run(&mut self) -> ScenarioTrace {
        let login = self.world.scenario.login.clone();
        self.login(&login.principal, login.consent)
            .expect("validated scenarios name an existing principal")
    }

    pub fn login(
        &mut self,
        username: &str,
        consent: ConsentChoice,
    ) -> Result<ScenarioTrace, HarnessError> {
        let principal = self
            .world
            .scenario
            .principal(username)
            .cloned()
            .ok_or_else(|| HarnessError::Scenario(format!("no principal `{username}`")))?;
        let preexisting_users = self
            .world
            .mock
            .state()
            .users
            .into_iter()
            .map(|u| u.name)
            .collect();
        self.world.observed = Default::default();
        let start = self.world.clock.elapsed_ms();
        let (outcome, error) = browse(&mut self.world, &principal, consent);
        let observed = std::mem::take(&mut self.world.observed);
        let total = self.world.clock.elapsed_ms() - start;
        Ok(ScenarioTrace {
            scenario: self.world.scenario.name.clone(),
            seed: self.seed,
            principal: username.to_owned(),
            preexisting_users,
            events: observed.events,
            outcome,
            error,
            total_login_latency_ms: total,
            aa_latency_ms: observed.aa_latency_ms,
            base_latency_ms: total - observed.aa_latency_ms,
            warnings: observed.warnings,
            backend_operations: observed.backend_operations,
            plan: observed.plan,
        })
    }
}

/// Runs a scenario's login in a fresh harness.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<ScenarioTrace, HarnessError> {
    Ok(Harness::new(scenario.clone(), seed)?.run())
}

/// Named `<input>` values of a consent page, entity-decoded.
pub fn hidden_inputs(html: &str) -> BTreeMap<String, String> {
    let mut fields = BTreeMap::new();
    for tag in html.split("<input").skip(1) {
        let tag = tag.split('>').next().unwrap_or_default();
        let attr = |name: &str| {
            let key = format!("{name}=\"");
            let start = tag.find(&key)? + key.len();
            let len = tag[start..].find('"')?;
            Some(html_escape::decode_html_entities(&tag[start..start + len]).into_owned())
        };
        if let (Some(name), Some(value)) = (attr("name"), attr("value")) {
            fields.insert(name, value);
        }
    }
    fields
}

fn browse(
    world: &mut World,
    principal: &Principal,
    consent: ConsentChoice,
) -> (Outcome, Option<String>) {
    let hop = world.scenario.entities.hop_latency_ms;
    let mut jar: HashMap<String, BTreeMap<String, String>> = HashMap::new();
    let start = World::horizon_url();
    world.emit(
        Some(WorkflowStep::I),
        Actor::Browser,
        Action::Navigate {
            url: start.to_string(),
        },
    );
    let mut next = Request::get(start);
    for _ in 0..MAX_HOPS {
        let host = next.url.host_str().unwrap_or_default().to_owned();
        next.cookies = jar.get(&host).cloned().unwrap_or_default();
        world.clock.advance(hop);
        let reply = world.handle(&next);
        jar.entry(host).or_default().extend(reply.cookies);
        next = match reply.response {
            Response::Redirect(location) => Request::get(location),
            Response::AutoPost { action, form } => Request::post(action, form),
            Response::Error {
                status,
                message,
                outcome,
            } => return (outcome, Some(format!("{status}: {message}"))),
            Response::Page(Page::Discovery { idps, select }) => {
                // The user picks their home IdP whether or not it is listed.
                let chosen = idps
                    .iter()
                    .find(|i| **i == principal.idp)
                    .cloned()
                    .unwrap_or_else(|| principal.idp.clone());
                world.emit(
                    Some(WorkflowStep::Iv),
                    Actor::Browser,
                    Action::IdpSelected {
                        idp: chosen.clone(),
                    },
                );
                let mut url = select;
                url.query_pairs_mut().append_pair("entityID", &chosen);
                Request::get(url)
            }
            Response::Page(Page::IdpLogin { action }) => Request::post(
                action,
                BTreeMap::from([("username".to_owned(), principal.username.clone())]),
            ),
            Response::Page(Page::Consent { html, action }) => {
                let decision = match consent {
                    ConsentChoice::Ignore => return (Outcome::ConsentPending, None),
                    ConsentChoice::Accept => "accept",
                    ConsentChoice::Abandon => "abandon",
                };
                world.emit(
                    Some(WorkflowStep::Vii),
                    Actor::Browser,
                    Action::ConsentDecision {
                        decision: decision.into(),
                    },
                );
                let mut form = hidden_inputs(&html);
                form.insert("decision".into(), decision.into());
                Request::post(action, form)
            }
            Response::Page(Page::Dashboard) => return (Outcome::TokenIssued, None),
            Response::Page(Page::Landing { reason }) => {
                let outcome = match reason.as_deref() {
                    Some("consent_abandoned") => Outcome::ConsentAbandoned,
                    Some("no_entitlement") => Outcome::DeniedNoEntitlement,
                    _ => Outcome::HookRejected,
                };
                return (outcome, None);
            }
        };
    }
    (Outcome::Stalled, Some(format!("gave up after {MAX_HOPS} requests")))
}

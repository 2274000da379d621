use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::trace::Outcome;
use super::{HarnessError, DISCOVERY_HOST, HORIZON_HOST, KEYSTONE_HOST};
use crate::attributes::AttributeConfig;

/// A single-valued or multi-valued attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    One(String),
    Many(Vec<String>),
}

impl AttrValue {
    pub fn values(&self) -> Vec<String> {
        match self {
            AttrValue::One(v) => vec![v.clone()],
            AttrValue::Many(vs) => vs.clone(),
        }
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::One(v.to_owned())
    }
}

pub type AttrMap = BTreeMap<String, AttrValue>;

fn default_true() -> bool {
    true
}

fn default_hop() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdpEntity {
    pub entity_id: String,
    #[serde(default)]
    pub latency_ms: u64,
    /// Whether the IdP appears in the federation metadata the discovery
    /// service and the SP trust.
    #[serde(default = "default_true")]
    pub listed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entities {
    pub idps: Vec<IdpEntity>,
    /// Simulated cost of every browser round trip.
    #[serde(default = "default_hop")]
    pub hop_latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Principal {
    pub idp: String,
    pub username: String,
    /// Attributes the IdP releases.
    pub attributes: AttrMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeAuthority {
    pub name: String,
    pub latency_ms: u64,
    /// Attributes released per subject identifier.
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrMap>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub consent_enabled: Option<bool>,
    pub require_entitlement: Option<bool>,
    pub entitlement_prefix: Option<String>,
    pub require_prefix_match: Option<bool>,
    pub attributes: Option<AttributeConfig>,
    /// A mapping document, inline.
    pub mapping_rules: Option<serde_json::Value>,
    pub hook_path: Option<String>,
    pub abandon_url: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsentChoice {
    #[default]
    Accept,
    Abandon,
    /// Leave the consent page without deciding.
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Login {
    pub principal: String,
    #[serde(default)]
    pub consent: ConsentChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendBehavior {
    /// `false` makes every backend call from the hook service fail.
    #[serde(default = "default_true")]
    pub available: bool,
    /// Fail every call after this many successful ones.
    pub fail_after: Option<usize>,
}

impl Default for BackendBehavior {
    fn default() -> Self {
        Self {
            available: true,
            fail_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub entities: Entities,
    pub principals: Vec<Principal>,
    #[serde(default)]
    pub aa_chain: Vec<AttributeAuthority>,
    #[serde(default)]
    pub config_overrides: ConfigOverrides,
    pub login: Login,
    pub expected_outcome: Outcome,
    /// Local user names that exist in the backend before the first login.
    #[serde(default)]
    pub preexisting_users: Vec<String>,
    #[serde(default)]
    pub backend: Option<BackendBehavior>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let scenario: Scenario = serde_json::from_str(text)
            .map_err(|e| HarnessError::Scenario(format!("invalid scenario JSON: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn principal(&self, username: &str) -> Option<&Principal> {
        self.principals.iter().find(|p| p.username == username)
    }

    pub fn idp(&self, entity_id: &str) -> Option<&IdpEntity> {
        self.entities.idps.iter().find(|i| i.entity_id == entity_id)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Scenario(m));
        let mut hosts = HashSet::from([HORIZON_HOST, KEYSTONE_HOST, DISCOVERY_HOST].map(String::from));
        for idp in &self.entities.idps {
            let Some(host) = url::Url::parse(&idp.entity_id)
                .ok()
                .and_then(|u| u.host_str().map(str::to_owned))
            else {
                return err(format!("IdP entity_id `{}` is not an absolute URL", idp.entity_id));
            };
            if !hosts.insert(host.clone()) {
                return err(format!("IdP host `{host}` is not unique"));
            }
        }
        let mut usernames = HashSet::new();
        for p in &self.principals {
            if self.idp(&p.idp).is_none() {
                return err(format!("principal `{}` references unknown IdP `{}`", p.username, p.idp));
            }
            if !usernames.insert(&p.username) {
                return err(format!("duplicate principal `{}`", p.username));
            }
        }
        if self.principal(&self.login.principal).is_none() {
            return err(format!("login principal `{}` does not exist", self.login.principal));
        }
        let mut names = HashSet::new();
        for aa in &self.aa_chain {
            if !names.insert(&aa.name) {
                return err(format!("duplicate attribute authority `{}`", aa.name));
            }
        }
        if let Some(path) = &self.config_overrides.hook_path {
            if !path.starts_with('/') || path.len() < 2 {
                return err(format!("hook_path `{path}` must be a non-root absolute path"));
            }
        }
        if let Some(attrs) = &self.config_overrides.attributes {
            attrs
                .validate()
                .map_err(|e| HarnessError::Scenario(e.to_string()))?;
        }
        Ok(())
    }
}

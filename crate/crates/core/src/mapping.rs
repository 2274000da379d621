//! Mapping rules from federated attributes to a local backend user.
//!
//! The document format is the Keystone-style mapping JSON:
//!
//! ```json
//! { "mapping": { "rules": [ {
//!     "local":  [ { "user": { "domain": { "id": "default" }, "type": "local", "name": "{0}" } } ],
//!     "remote": [ { "type": "eppn" } ]
//! } ] } }
//! ```
//!
//! Only the `{0}` placeholder is supported. Rules are evaluated in document
//! order and the first rule whose remote attributes are all present wins.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::attributes::{AttributeBundle, AttributeConfig};

pub const PLACEHOLDER: &str = "{0}";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MappingError {
    #[error("malformed mapping rules at `{path}`: {message}")]
    MalformedRules { path: String, message: String },
    #[error("no mapping rule matches the released attributes")]
    NoMatchingRule,
}

fn malformed(path: impl Into<String>, message: impl Into<String>) -> MappingError {
    MappingError::MalformedRules {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRef {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTemplate {
    pub domain: DomainRef,
    #[serde(rename = "type")]
    pub user_type: String,
    #[serde(rename = "name")]
    pub name_template: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalTemplate {
    pub user: UserTemplate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteMatcher {
    #[serde(rename = "type")]
    pub attr_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub local: Vec<LocalTemplate>,
    pub remote: Vec<RemoteMatcher>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingRules {
    pub rules: Vec<Rule>,
}

#[derive(Serialize)]
struct Document<'a> {
    mapping: &'a MappingRules,
}

/// The backend account a federated identity maps to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LocalUserSpec {
    pub name: String,
    pub domain_id: String,
    pub user_type: String,
}

impl MappingRules {
    /// Serializes back into the `{"mapping": {"rules": [...]}}` document form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Document { mapping: self })
            .expect("mapping rules are always serializable")
    }
}

fn field<'a>(value: &'a Value, key: &str, path: &str) -> Result<&'a Value, MappingError> {
    value
        .as_object()
        .ok_or_else(|| malformed(path, "expected an object"))?
        .get(key)
        .ok_or_else(|| malformed(join(path, key), format!("{key} missing")))
}

fn string_field(value: &Value, key: &str, path: &str) -> Result<String, MappingError> {
    field(value, key, path)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| malformed(join(path, key), "expected a string"))
}

fn array_field<'a>(value: &'a Value, key: &str, path: &str) -> Result<&'a [Value], MappingError> {
    let items = field(value, key, path)?
        .as_array()
        .ok_or_else(|| malformed(join(path, key), "expected an array"))?;
    if items.is_empty() {
        return Err(malformed(join(path, key), "must not be empty"));
    }
    Ok(items)
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_owned()
    } else {
        format!("{path}.{key}")
    }
}

fn parse_local(value: &Value, path: &str) -> Result<LocalTemplate, MappingError> {
    let user = field(value, "user", path)?;
    let user_path = join(path, "user");
    let domain = field(user, "domain", &user_path)?;
    let domain_id = string_field(domain, "id", &join(&user_path, "domain"))?;
    let user_type = string_field(user, "type", &user_path)?;
    let name_template = string_field(user, "name", &user_path)?;

    if name_template.is_empty() {
        return Err(malformed(join(&user_path, "name"), "must not be empty"));
    }
    if name_template.matches(PLACEHOLDER).count() > 1 {
        return Err(malformed(
            join(&user_path, "name"),
            "at most one {0} placeholder is supported",
        ));
    }
    if domain_id.contains(PLACEHOLDER) || user_type.contains(PLACEHOLDER) {
        return Err(malformed(
            user_path,
            "{0} is only supported in the user name",
        ));
    }
    Ok(LocalTemplate {
        user: UserTemplate {
            domain: DomainRef { id: domain_id },
            user_type,
            name_template,
        },
    })
}

/// Parses a mapping document.
pub fn parse_mapping_rules(document: &str) -> Result<MappingRules, MappingError> {
    let root: Value =
        serde_json::from_str(document).map_err(|e| malformed("", format!("invalid JSON: {e}")))?;
    let mapping = field(&root, "mapping", "")?;
    let rules = array_field(mapping, "rules", "mapping")?;

    let rules = rules
        .iter()
        .enumerate()
        .map(|(i, rule)| {
            let path = format!("mapping.rules[{i}]");
            let local = array_field(rule, "local", &path)?
                .iter()
                .enumerate()
                .map(|(j, l)| parse_local(l, &format!("{path}.local[{j}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let remote = array_field(rule, "remote", &path)?
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    let remote_path = format!("{path}.remote[{j}]");
                    let attr_type = string_field(r, "type", &remote_path)?;
                    if attr_type.is_empty() {
                        return Err(malformed(join(&remote_path, "type"), "must not be empty"));
                    }
                    Ok(RemoteMatcher { attr_type })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Rule { local, remote })
        })
        .collect::<Result<Vec<_>, MappingError>>()?;

    Ok(MappingRules { rules })
}

/// Maps a bundle to the local user described by the first matching rule.
///
/// A rule matches when every remote attribute it names is present in the
/// bundle; `{0}` is replaced by the value of its first remote attribute.
pub fn apply_rules(
    rules: &MappingRules,
    bundle: &AttributeBundle,
    config: &AttributeConfig,
) -> Result<LocalUserSpec, MappingError> {
    for rule in &rules.rules {
        let values: Option<Vec<String>> = rule
            .remote
            .iter()
            .map(|m| bundle.attribute(&m.attr_type, config))
            .collect();
        let Some(values) = values else { continue };
        let template = &rule.local[0].user;
        let name = template.name_template.replace(PLACEHOLDER, &values[0]);
        if name.is_empty() {
            continue;
        }
        return Ok(LocalUserSpec {
            name,
            domain_id: template.domain.id.clone(),
            user_type: template.user_type.clone(),
        });
    }
    Err(MappingError::NoMatchingRule)
}

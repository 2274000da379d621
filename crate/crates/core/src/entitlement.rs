//! Entitlement values of the form `<entitlement_prefix>:project:role`.
//!
//! The prefix may itself contain colons; the last two segments are always
//! the project and the role.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::AttributeBundle;
use crate::mapping::LocalUserSpec;

pub const SEGMENT_SEPARATOR: char = ':';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntitlementError {
    #[error("malformed entitlement `{value}`: {reason}")]
    MalformedEntitlement { value: String, reason: &'static str },
    #[error("invalid entitlement configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntitlementConfig {
    pub entitlement_prefix: String,
    pub require_prefix_match: bool,
}

impl Default for EntitlementConfig {
    fn default() -> Self {
        Self {
            entitlement_prefix: String::new(),
            require_prefix_match: true,
        }
    }
}

impl EntitlementConfig {
    pub fn with_prefix(prefix: impl Into<String>) -> Self {
        Self {
            entitlement_prefix: prefix.into(),
            require_prefix_match: true,
        }
    }

    pub fn validate(&self) -> Result<(), EntitlementError> {
        if self.require_prefix_match && self.entitlement_prefix.is_empty() {
            return Err(EntitlementError::InvalidConfig(
                "entitlement_prefix must be set when require_prefix_match is on".into(),
            ));
        }
        Ok(())
    }
}

/// One role on one project.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub project: String,
    pub role: String,
}

impl Assignment {
    pub fn new(project: impl Into<String>, role: impl Into<String>) -> Self {
        Self {
            project: project.into(),
            role: role.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedEntitlement {
    Assignment(Assignment),
    /// Well-formed, but scoped to a different prefix.
    Skipped,
}

pub fn parse_entitlement(
    raw: &str,
    config: &EntitlementConfig,
) -> Result<ParsedEntitlement, EntitlementError> {
    let malformed = |reason| EntitlementError::MalformedEntitlement {
        value: raw.to_owned(),
        reason,
    };
    let mut segments = raw.rsplitn(3, SEGMENT_SEPARATOR);
    let role = segments.next().unwrap_or_default();
    let (Some(project), Some(prefix)) = (segments.next(), segments.next()) else {
        return Err(malformed("fewer than three segments"));
    };
    if project.is_empty() || role.is_empty() {
        return Err(malformed("empty project or role segment"));
    }
    if config.require_prefix_match && prefix != config.entitlement_prefix {
        return Ok(ParsedEntitlement::Skipped);
    }
    Ok(ParsedEntitlement::Assignment(Assignment::new(project, role)))
}

/// Everything the backend should contain for one federated user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesiredState {
    pub user: LocalUserSpec,
    pub assignments: BTreeSet<Assignment>,
    pub mail: Option<String>,
    /// Per-value problems that did not abort the login.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Parses all entitlements of a bundle. Values for other prefixes are
/// ignored; malformed values become warnings.
pub fn derive_desired_state(
    bundle: &AttributeBundle,
    user: LocalUserSpec,
    config: &EntitlementConfig,
) -> DesiredState {
    let mut assignments = BTreeSet::new();
    let mut warnings = Vec::new();
    for raw in &bundle.entitlements {
        match parse_entitlement(raw, config) {
            Ok(ParsedEntitlement::Assignment(a)) => {
                assignments.insert(a);
            }
            Ok(ParsedEntitlement::Skipped) => {}
            Err(e) => {
                tracing::warn!(identifier = %bundle.identifier, "{e}");
                warnings.push(e.to_string());
            }
        }
    }
    DesiredState {
        user,
        assignments,
        mail: bundle.mail.clone(),
        warnings,
    }
}

//! The attribute payload released by the SAML middleware at the session hook.
//!
//! The middleware (a Shibboleth-style SP) authenticates the user, merges and
//! filters attributes from the IdP and any attribute authorities, and hands a
//! flat `name -> value` map to the hook. This module turns that map into an
//! [`AttributeBundle`] using configurable attribute names.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator between multiple values of one attribute.
pub const MULTI_VALUE_SEPARATOR: char = ';';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttributeError {
    #[error("identifier attribute `{0}` missing or empty")]
    MissingIdentifier(String),
    #[error("invalid attribute configuration: {0}")]
    InvalidConfig(String),
}

/// Names of the middleware attributes that carry the identifier, the
/// entitlements and the mail address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeConfig {
    pub identifier_attr: String,
    pub entitlement_attr: String,
    pub mail_attr: String,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        Self {
            identifier_attr: "eppn".into(),
            entitlement_attr: "entitlement".into(),
            mail_attr: "mail".into(),
        }
    }
}

impl AttributeConfig {
    pub fn validate(&self) -> Result<(), AttributeError> {
        let names = [
            ("identifier_attr", &self.identifier_attr),
            ("entitlement_attr", &self.entitlement_attr),
            ("mail_attr", &self.mail_attr),
        ];
        for (field, name) in names {
            if name.is_empty() {
                return Err(AttributeError::InvalidConfig(format!("{field} is empty")));
            }
        }
        if self.identifier_attr == self.entitlement_attr
            || self.identifier_attr == self.mail_attr
            || self.entitlement_attr == self.mail_attr
        {
            return Err(AttributeError::InvalidConfig(
                "attribute names must be pairwise distinct".into(),
            ));
        }
        Ok(())
    }

    /// Returns the configured spelling if `name` matches one of the three
    /// attribute names ignoring ASCII case.
    ///
    /// HTTP header names arrive lower-cased, so the header adapter uses this
    /// to recover e.g. `eduPersonPrincipalName` from `x-fed-attr-edupersonprincipalname`.
    pub fn canonical_name<'a>(&'a self, name: &str) -> Option<&'a str> {
        [&self.identifier_attr, &self.entitlement_attr, &self.mail_attr]
            .into_iter()
            .find(|configured| configured.eq_ignore_ascii_case(name))
            .map(String::as_str)
    }
}

/// Identity, authorization and profile information for one federated login.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeBundle {
    pub identifier: String,
    pub entitlements: Vec<String>,
    pub mail: Option<String>,
}

impl AttributeBundle {
    /// Value of the attribute with the given configured name, as the mapping
    /// engine sees it. Entitlements are re-joined with `;`.
    pub fn attribute(&self, name: &str, config: &AttributeConfig) -> Option<String> {
        if name == config.identifier_attr {
            Some(self.identifier.clone())
        } else if name == config.mail_attr {
            self.mail.clone()
        } else if name == config.entitlement_attr && !self.entitlements.is_empty() {
            Some(self.entitlements.join(";"))
        } else {
            None
        }
    }
}

/// Splits a multi-valued attribute on `;`, trimming each fragment and
/// dropping empty ones.
pub fn split_multi_value(value: &str) -> Vec<String> {
    value
        .split(MULTI_VALUE_SEPARATOR)
        .map(str::trim)
        .filter(|fragment| !fragment.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Builds the bundle from the raw attribute map delivered by the middleware.
pub fn extract_bundle(
    raw_attributes: &BTreeMap<String, String>,
    config: &AttributeConfig,
) -> Result<AttributeBundle, AttributeError> {
    let identifier = raw_attributes
        .get(&config.identifier_attr)
        .filter(|value| !value.is_empty())
        .ok_or_else(|| AttributeError::MissingIdentifier(config.identifier_attr.clone()))?
        .clone();

    let entitlements = raw_attributes
        .get(&config.entitlement_attr)
        .map(|value| split_multi_value(value))
        .unwrap_or_default();

    let mail = raw_attributes
        .get(&config.mail_attr)
        .filter(|value| !value.is_empty())
        .cloned();

    Ok(AttributeBundle {
        identifier,
        entitlements,
        mail,
    })
}

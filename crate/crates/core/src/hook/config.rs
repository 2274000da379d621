use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::AttributeConfig;
use crate::entitlement::EntitlementConfig;
use crate::mapping::{parse_mapping_rules, MappingError, MappingRules};

/// Environment variable consulted when no `--config` is given.
pub const CONFIG_ENV: &str = "FEDPROV_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("mapping rules {path}: {source}")]
    Mapping {
        path: PathBuf,
        #[source]
        source: MappingError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// In-process mock backend; state is lost on restart.
    Memory,
    /// Keystone-v3-compatible REST endpoint.
    Http {
        endpoint: String,
        token: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    10
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_hook_path() -> String {
    "/regsite".into()
}

fn default_true() -> bool {
    true
}

fn default_consent_ttl() -> u64 {
    600
}

/// Service configuration file (JSON). Relative paths are resolved against
/// the directory holding the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_hook_path")]
    pub hook_path: String,
    #[serde(default)]
    pub attributes: AttributeConfig,
    #[serde(default)]
    pub entitlements: EntitlementConfig,
    pub mapping_rules_path: PathBuf,
    pub backend: BackendConfig,
    #[serde(default = "default_true")]
    pub consent_enabled: bool,
    #[serde(default = "default_true")]
    pub require_entitlement: bool,
    pub abandon_url: String,
    pub ledger_path: PathBuf,
    pub consent_store_path: PathBuf,
    #[serde(default = "default_consent_ttl")]
    pub consent_ttl_secs: u64,
}

impl ServiceConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: ServiceConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.mapping_rules_path,
            &mut self.ledger_path,
            &mut self.consent_store_path,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.listen
            .parse::<SocketAddr>()
            .map_err(|e| invalid(format!("listen `{}`: {e}", self.listen)))?;
        if !self.hook_path.starts_with('/') || self.hook_path.len() < 2 {
            return Err(invalid(format!(
                "hook_path `{}` must be a non-root absolute path",
                self.hook_path
            )));
        }
        self.attributes
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.entitlements
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        url::Url::parse(&self.abandon_url)
            .map_err(|e| invalid(format!("abandon_url `{}`: {e}", self.abandon_url)))?;
        if let BackendConfig::Http { endpoint, .. } = &self.backend {
            url::Url::parse(endpoint)
                .map_err(|e| invalid(format!("backend endpoint `{endpoint}`: {e}")))?;
        }
        for (field, p) in [
            ("ledger_path", &self.ledger_path),
            ("consent_store_path", &self.consent_store_path),
        ] {
            let parent = p.parent().filter(|d| !d.as_os_str().is_empty());
            if let Some(dir) = parent {
                if !dir.is_dir() {
                    return Err(invalid(format!(
                        "{field}: directory {} does not exist",
                        dir.display()
                    )));
                }
            }
        }
        self.mapping_rules()?;
        Ok(())
    }

    pub fn mapping_rules(&self) -> Result<MappingRules, ConfigError> {
        let path = &self.mapping_rules_path;
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        parse_mapping_rules(&text).map_err(|source| ConfigError::Mapping {
            path: path.clone(),
            source,
        })
    }

    pub fn settings(&self) -> Result<super::HookSettings, ConfigError> {
        Ok(super::HookSettings {
            hook_path: self.hook_path.clone(),
            attributes: self.attributes.clone(),
            entitlements: self.entitlements.clone(),
            rules: self.mapping_rules()?,
            consent_enabled: self.consent_enabled,
            require_entitlement: self.require_entitlement,
            abandon_url: self.abandon_url.clone(),
            consent_ttl: chrono::Duration::seconds(self.consent_ttl_secs as i64),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RULES: &str = r#"{"mapping":{"rules":[{"local":[{"user":{"domain":{"id":"default"},"type":"local","name":"{0}"}}],"remote":[{"type":"eppn"}]}]}}"#;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        std::fs::write(dir.join("mapping.json"), RULES).unwrap();
        let path = dir.join("config.json");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn loads_with_defaults_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            r#"{
                "entitlements": {"entitlement_prefix": "urn:x:cloud"},
                "mapping_rules_path": "mapping.json",
                "backend": {"kind": "memory"},
                "abandon_url": "https://portal.example/abandoned",
                "ledger_path": "ledger.jsonl",
                "consent_store_path": "consent.jsonl"
            }"#,
        );
        let config = ServiceConfig::load(&path).unwrap();
        assert_eq!(config.hook_path, "/regsite");
        assert!(config.consent_enabled);
        assert!(config.require_entitlement);
        assert_eq!(config.attributes, AttributeConfig::default());
        assert_eq!(config.ledger_path, dir.path().join("ledger.jsonl"));
        let settings = config.settings().unwrap();
        assert_eq!(settings.rules.rules.len(), 1);
    }

    #[test]
    fn rejects_invalid_values() {
        let dir = tempfile::tempdir().unwrap();
        let base = r#"{
                "entitlements": {"entitlement_prefix": "urn:x:cloud"},
                "mapping_rules_path": "mapping.json",
                "backend": {"kind": "http", "endpoint": "http://127.0.0.1:5000", "token": "t"},
                "abandon_url": "https://portal.example/abandoned",
                "ledger_path": "ledger.jsonl",
                "consent_store_path": "consent.jsonl"
            }"#;
        assert!(ServiceConfig::load(write_config(dir.path(), base)).is_ok());

        let cases = [
            base.replace("https://portal.example/abandoned", "not a url"),
            base.replace("\"mapping.json\"", "\"missing.json\""),
            base.replace("ledger.jsonl", "nodir/ledger.jsonl"),
            base.replace(r#""entitlement_prefix": "urn:x:cloud""#, r#""require_prefix_match": true"#),
            base.replace(r#""abandon_url""#, r#""hook_path": "", "abandon_url""#),
            base.replace(r#""abandon_url""#, r#""bogus": 1, "abandon_url""#),
        ];
        for (i, body) in cases.iter().enumerate() {
            assert!(
                ServiceConfig::load(write_config(dir.path(), body)).is_err(),
                "case {i} should fail"
            );
        }
    }
}

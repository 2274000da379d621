//! JSON bodies of the Keystone v3 subset, shared by client and mock server.

use fedprov_core::backend::{BackendError, BackendProject, BackendRole, BackendUser, EntityKind};
use serde::{Deserialize, Serialize};

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct User {
    pub id: String,
    pub name: String,
    pub domain_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub email: Option<String>,
    #[serde(default = "yes")]
    pub enabled: bool,
}

impl From<BackendUser> for User {
    fn from(u: BackendUser) -> Self {
        Self {
            id: u.id,
            name: u.name,
            domain_id: u.domain_id,
            email: u.mail,
            enabled: u.enabled,
        }
    }
}

impl From<User> for BackendUser {
    fn from(u: User) -> Self {
        Self {
            id: u.id,
            name: u.name,
            domain_id: u.domain_id,
            mail: u.email,
            enabled: u.enabled,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewUser {
    pub name: String,
    pub domain_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub email: Option<String>,
    #[serde(default = "yes")]
    pub enabled: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UserPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub email: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewProject {
    pub name: String,
    #[serde(default = "default_domain")]
    pub domain_id: String,
}

fn default_domain() -> String {
    "default".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewRole {
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserEnvelope<T> {
    pub user: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectEnvelope<T> {
    pub project: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoleEnvelope<T> {
    pub role: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Users {
    pub users: Vec<User>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Projects {
    pub projects: Vec<BackendProject>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Roles {
    pub roles: Vec<BackendRole>,
}

/// Keystone error body. `kind` and `target` are extensions that let the
/// client rebuild a typed [`BackendError`]; other servers may omit them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: u16,
    pub title: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EntityKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl ErrorBody {
    pub fn from_backend(err: &BackendError) -> Self {
        let (code, title, kind, target) = match err {
            BackendError::Unavailable(_) => (503, "Service Unavailable", None, None),
            BackendError::Conflict { kind, name } => (409, "Conflict", Some(*kind), Some(name)),
            BackendError::UnknownEntity { kind, id } => (404, "Not Found", Some(*kind), Some(id)),
            BackendError::InvalidRequest(_) => (400, "Bad Request", None, None),
        };
        Self {
            error: ErrorDetail {
                code,
                title: title.into(),
                message: match err {
                    BackendError::Unavailable(m) | BackendError::InvalidRequest(m) => m.clone(),
                    _ => err.to_string(),
                },
                kind,
                target: target.cloned(),
            },
        }
    }
}

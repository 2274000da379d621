//! The identity backend as seen by the provisioning service.
//!
//! [`IdentityBackend`] is the whole contract: nine operations, nothing more.
//! Anything the service needs beyond them (snapshots for planning, conflict
//! resolution) is composed from these calls, which keeps the service
//! loosely coupled to the backend it provisions into.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::LocalUserSpec;

mod faulty;
mod mock;
mod recording;

pub use faulty::FaultyBackend;
pub use mock::MockBackend;
pub use recording::RecordingBackend;

/// The nine backend operations the service is allowed to invoke.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operation {
    #[serde(rename = "users.list")]
    UsersList,
    #[serde(rename = "roles.list")]
    RolesList,
    #[serde(rename = "projects.list")]
    ProjectsList,
    #[serde(rename = "projects.create")]
    ProjectsCreate,
    #[serde(rename = "roles.create")]
    RolesCreate,
    #[serde(rename = "users.create")]
    UsersCreate,
    #[serde(rename = "roles.grant")]
    RolesGrant,
    #[serde(rename = "roles.revoke")]
    RolesRevoke,
    #[serde(rename = "users.update")]
    UsersUpdate,
}

impl Operation {
    pub const ALL: [Operation; 9] = [
        Operation::UsersList,
        Operation::RolesList,
        Operation::ProjectsList,
        Operation::ProjectsCreate,
        Operation::RolesCreate,
        Operation::UsersCreate,
        Operation::RolesGrant,
        Operation::RolesRevoke,
        Operation::UsersUpdate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operation::UsersList => "users.list",
            Operation::RolesList => "roles.list",
            Operation::ProjectsList => "projects.list",
            Operation::ProjectsCreate => "projects.create",
            Operation::RolesCreate => "roles.create",
            Operation::UsersCreate => "users.create",
            Operation::RolesGrant => "roles.grant",
            Operation::RolesRevoke => "roles.revoke",
            Operation::UsersUpdate => "users.update",
        }
    }

    pub fn is_mutation(self) -> bool {
        !matches!(
            self,
            Operation::UsersList | Operation::RolesList | Operation::ProjectsList
        )
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    User,
    Project,
    Role,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::User => "user",
            EntityKind::Project => "project",
            EntityKind::Role => "role",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("identity backend unavailable: {0}")]
    Unavailable(String),
    #[error("{kind} `{name}` already exists")]
    Conflict { kind: EntityKind, name: String },
    #[error("unknown {kind} `{id}`")]
    UnknownEntity { kind: EntityKind, id: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendUser {
    pub id: String,
    pub name: String,
    pub domain_id: String,
    #[serde(default)]
    pub mail: Option<String>,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendProject {
    pub id: String,
    pub name: String,
    pub domain_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendRole {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RoleGrant {
    pub user_id: String,
    pub role_id: String,
    pub project_id: String,
}

impl RoleGrant {
    pub fn new(
        user_id: impl Into<String>,
        role_id: impl Into<String>,
        project_id: impl Into<String>,
    ) -> Self {
        Self {
            user_id: user_id.into(),
            role_id: role_id.into(),
            project_id: project_id.into(),
        }
    }
}

/// Fields of a user that `users.update` may change. `None` leaves a field
/// untouched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserUpdate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
}

/// Which roles `roles.list` returns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoleScope {
    /// Every role defined in the backend.
    All,
    /// Roles the user holds on the project.
    Assigned { user_id: String, project_id: String },
}

pub trait IdentityBackend: Send + Sync {
    fn users_list(&self) -> Result<Vec<BackendUser>, BackendError>;
    fn roles_list(&self, scope: &RoleScope) -> Result<Vec<BackendRole>, BackendError>;
    fn projects_list(&self) -> Result<Vec<BackendProject>, BackendError>;
    fn projects_create(&self, name: &str, domain_id: &str)
        -> Result<BackendProject, BackendError>;
    fn roles_create(&self, name: &str) -> Result<BackendRole, BackendError>;
    fn users_create(
        &self,
        spec: &LocalUserSpec,
        mail: Option<&str>,
    ) -> Result<BackendUser, BackendError>;
    fn roles_grant(&self, user_id: &str, role_id: &str, project_id: &str)
        -> Result<(), BackendError>;
    fn roles_revoke(&self, user_id: &str, role_id: &str, project_id: &str)
        -> Result<(), BackendError>;
    fn users_update(&self, user_id: &str, update: &UserUpdate)
        -> Result<BackendUser, BackendError>;
}

macro_rules! forward_backend {
    ($($target:ty),*) => {$(
        impl<T: IdentityBackend + ?Sized> IdentityBackend for $target {
            fn users_list(&self) -> Result<Vec<BackendUser>, BackendError> {
                (**self).users_list()
            }
            fn roles_list(&self, scope: &RoleScope) -> Result<Vec<BackendRole>, BackendError> {
                (**self).roles_list(scope)
            }
            fn projects_list(&self) -> Result<Vec<BackendProject>, BackendError> {
                (**self).projects_list()
            }
            fn projects_create(&self, name: &str, domain_id: &str) -> Result<BackendProject, BackendError> {
                (**self).projects_create(name, domain_id)
            }
            fn roles_create(&self, name: &str) -> Result<BackendRole, BackendError> {
                (**self).roles_create(name)
            }
            fn users_create(&self, spec: &LocalUserSpec, mail: Option<&str>) -> Result<BackendUser, BackendError> {
                (**self).users_create(spec, mail)
            }
            fn roles_grant(&self, user_id: &str, role_id: &str, project_id: &str) -> Result<(), BackendError> {
                (**self).roles_grant(user_id, role_id, project_id)
            }
            fn roles_revoke(&self, user_id: &str, role_id: &str, project_id: &str) -> Result<(), BackendError> {
                (**self).roles_revoke(user_id, role_id, project_id)
            }
            fn users_update(&self, user_id: &str, update: &UserUpdate) -> Result<BackendUser, BackendError> {
                (**self).users_update(user_id, update)
            }
        }
    )*};
}

forward_backend!(Arc<T>, Box<T>, &T);

/// Point-in-time view of the backend used for planning.
///
/// `grants` may be scoped to a single user (see [`user_snapshot`]).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendSnapshot {
    pub users: Vec<BackendUser>,
    pub projects: Vec<BackendProject>,
    pub roles: Vec<BackendRole>,
    pub grants: BTreeSet<RoleGrant>,
}

impl BackendSnapshot {
    pub fn user(&self, name: &str, domain_id: &str) -> Option<&BackendUser> {
        self.users
            .iter()
            .find(|u| u.name == name && u.domain_id == domain_id)
    }

    pub fn project(&self, name: &str, domain_id: &str) -> Option<&BackendProject> {
        self.projects
            .iter()
            .find(|p| p.name == name && p.domain_id == domain_id)
    }

    pub fn role(&self, name: &str) -> Option<&BackendRole> {
        self.roles.iter().find(|r| r.name == name)
    }

    /// Every grant id resolves to an entity in the snapshot.
    pub fn is_consistent(&self) -> bool {
        self.grants.iter().all(|g| {
            self.users.iter().any(|u| u.id == g.user_id)
                && self.roles.iter().any(|r| r.id == g.role_id)
                && self.projects.iter().any(|p| p.id == g.project_id)
        })
    }
}

fn grants_of(
    backend: &dyn IdentityBackend,
    user: &BackendUser,
    projects: &[BackendProject],
    grants: &mut BTreeSet<RoleGrant>,
) -> Result<(), BackendError> {
    for project in projects {
        let scope = RoleScope::Assigned {
            user_id: user.id.clone(),
            project_id: project.id.clone(),
        };
        for role in backend.roles_list(&scope)? {
            grants.insert(RoleGrant::new(&user.id, role.id, &project.id));
        }
    }
    Ok(())
}

/// Full snapshot, composed only from the list operations.
pub fn snapshot(backend: &dyn IdentityBackend) -> Result<BackendSnapshot, BackendError> {
    let users = backend.users_list()?;
    let projects = backend.projects_list()?;
    let roles = backend.roles_list(&RoleScope::All)?;
    let mut grants = BTreeSet::new();
    for user in &users {
        grants_of(backend, user, &projects, &mut grants)?;
    }
    Ok(BackendSnapshot {
        users,
        projects,
        roles,
        grants,
    })
}

/// Snapshot whose grant set covers only the given user. This is all the
/// planner needs and costs one scoped `roles.list` per project.
pub fn user_snapshot(
    backend: &dyn IdentityBackend,
    user_name: &str,
    domain_id: &str,
) -> Result<BackendSnapshot, BackendError> {
    let users = backend.users_list()?;
    let projects = backend.projects_list()?;
    let roles = backend.roles_list(&RoleScope::All)?;
    let mut grants = BTreeSet::new();
    if let Some(user) = users
        .iter()
        .find(|u| u.name == user_name && u.domain_id == domain_id)
    {
        grants_of(backend, user, &projects, &mut grants)?;
    }
    Ok(BackendSnapshot {
        users,
        projects,
        roles,
        grants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn surface_is_exactly_nine_operations() {
        let names: HashSet<&str> = Operation::ALL.iter().map(|op| op.name()).collect();
        let expected: HashSet<&str> = [
            "users.list",
            "roles.list",
            "projects.list",
            "projects.create",
            "roles.create",
            "users.create",
            "roles.grant",
            "roles.revoke",
            "users.update",
        ]
        .into();
        assert_eq!(names, expected);
        assert_eq!(Operation::ALL.len(), 9);
        for op in Operation::ALL {
            let json = serde_json::to_string(&op).unwrap();
            assert_eq!(json, format!("\"{}\"", op.name()));
        }
    }

    #[test]
    fn composed_snapshots_match_mock_state() {
        let mock = MockBackend::new();
        let alice = mock
            .users_create(
                &LocalUserSpec {
                    name: "alice".into(),
                    domain_id: "default".into(),
                    user_type: "local".into(),
                },
                None,
            )
            .unwrap();
        let bob = mock
            .users_create(
                &LocalUserSpec {
                    name: "bob".into(),
                    domain_id: "default".into(),
                    user_type: "local".into(),
                },
                None,
            )
            .unwrap();
        let p = mock.projects_create("projA", "default").unwrap();
        let r = mock.roles_create("admin").unwrap();
        mock.roles_grant(&alice.id, &r.id, &p.id).unwrap();
        mock.roles_grant(&bob.id, &r.id, &p.id).unwrap();

        let full = snapshot(&mock).unwrap();
        assert_eq!(full, mock.state());
        assert!(full.is_consistent());

        let scoped = user_snapshot(&mock, "alice", "default").unwrap();
        assert_eq!(
            scoped.grants,
            BTreeSet::from([RoleGrant::new(&alice.id, &r.id, &p.id)])
        );
        let none = user_snapshot(&mock, "carol", "default").unwrap();
        assert!(none.grants.is_empty());
    }
}

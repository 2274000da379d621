use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Mutex, MutexGuard};

use super::{
    BackendError, BackendProject, BackendRole, BackendSnapshot, BackendUser, EntityKind,
    IdentityBackend, RoleGrant, RoleScope, UserUpdate,
};
use crate::mapping::LocalUserSpec;

#[derive(Debug, Default)]
struct State {
    next_id: u64,
    users: BTreeMap<String, BackendUser>,
    projects: BTreeMap<String, BackendProject>,
    roles: BTreeMap<String, BackendRole>,
    grants: BTreeSet<RoleGrant>,
}

impl State {
    fn fresh_id(&mut self, prefix: &str) -> String {
        loop {
            self.next_id += 1;
            let id = format!("{prefix}-{:06}", self.next_id);
            if !self.users.contains_key(&id)
                && !self.projects.contains_key(&id)
                && !self.roles.contains_key(&id)
            {
                return id;
            }
        }
    }

    fn require(&self, kind: EntityKind, id: &str) -> Result<(), BackendError> {
        let present = match kind {
            EntityKind::User => self.users.contains_key(id),
            EntityKind::Project => self.projects.contains_key(id),
            EntityKind::Role => self.roles.contains_key(id),
        };
        if present {
            Ok(())
        } else {
            Err(BackendError::UnknownEntity {
                kind,
                id: id.to_owned(),
            })
        }
    }

    fn require_grant_ids(
        &self,
        user_id: &str,
        role_id: &str,
        project_id: &str,
    ) -> Result<(), BackendError> {
        self.require(EntityKind::User, user_id)?;
        self.require(EntityKind::Role, role_id)?;
        self.require(EntityKind::Project, project_id)
    }
}

/// In-memory identity backend.
///
/// Every operation runs under one lock, so creates are atomic
/// check-and-insert: two racing creates of the same name yield one entity
/// and one [`BackendError::Conflict`].
#[derive(Debug, Default)]
pub struct MockBackend {
    state: Mutex<State>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeds a backend with existing entities, keeping their ids.
    pub fn from_snapshot(snapshot: &BackendSnapshot) -> Self {
        let state = State {
            users: snapshot
                .users
                .iter()
                .map(|u| (u.id.clone(), u.clone()))
                .collect(),
            projects: snapshot
                .projects
                .iter()
                .map(|p| (p.id.clone(), p.clone()))
                .collect(),
            roles: snapshot
                .roles
                .iter()
                .map(|r| (r.id.clone(), r.clone()))
                .collect(),
            grants: snapshot.grants.clone(),
            ..State::default()
        };
        Self {
            state: Mutex::new(state),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Full state, read directly rather than through the list operations.
    pub fn state(&self) -> BackendSnapshot {
        let state = self.lock();
        BackendSnapshot {
            users: state.users.values().cloned().collect(),
            projects: state.projects.values().cloned().collect(),
            roles: state.roles.values().cloned().collect(),
            grants: state.grants.clone(),
        }
    }

    /// Direct lookup used by the simulated identity service when it
    /// authenticates a federated session.
    pub fn find_user(&self, name: &str, domain_id: &str) -> Option<BackendUser> {
        self.lock()
            .users
            .values()
            .find(|u| u.name == name && u.domain_id == domain_id)
            .cloned()
    }

    pub fn user_by_id(&self, id: &str) -> Option<BackendUser> {
        self.lock().users.get(id).cloned()
    }

    pub fn user_count(&self) -> usize {
        self.lock().users.len()
    }
}

impl IdentityBackend for MockBackend {
    fn users_list(&self) -> Result<Vec<BackendUser>, BackendError> {
        Ok(self.lock().users.values().cloned().collect())
    }

    fn roles_list(&self, scope: &RoleScope) -> Result<Vec<BackendRole>, BackendError> {
        let state = self.lock();
        match scope {
            RoleScope::All => Ok(state.roles.values().cloned().collect()),
            RoleScope::Assigned {
                user_id,
                project_id,
            } => {
                state.require(EntityKind::User, user_id)?;
                state.require(EntityKind::Project, project_id)?;
                Ok(state
                    .grants
                    .iter()
                    .filter(|g| &g.user_id == user_id && &g.project_id == project_id)
                    .filter_map(|g| state.roles.get(&g.role_id).cloned())
                    .collect())
            }
        }
    }

    fn projects_list(&self) -> Result<Vec<BackendProject>, BackendError> {
        Ok(self.lock().projects.values().cloned().collect())
    }

    fn projects_create(
        &self,
        name: &str,
        domain_id: &str,
    ) -> Result<BackendProject, BackendError> {
        if name.is_empty() {
            return Err(BackendError::InvalidRequest("project name is empty".into()));
        }
        let mut state = self.lock();
        if state
            .projects
            .values()
            .any(|p| p.name == name && p.domain_id == domain_id)
        {
            return Err(BackendError::Conflict {
                kind: EntityKind::Project,
                name: name.to_owned(),
            });
        }
        let project = BackendProject {
            id: state.fresh_id("project"),
            name: name.to_owned(),
            domain_id: domain_id.to_owned(),
        };
        state.projects.insert(project.id.clone(), project.clone());
        Ok(project)
    }

    fn roles_create(&self, name: &str) -> Result<BackendRole, BackendError> {
        if name.is_empty() {
            return Err(BackendError::InvalidRequest("role name is empty".into()));
        }
        let mut state = self.lock();
        if state.roles.values().any(|r| r.name == name) {
            return Err(BackendError::Conflict {
                kind: EntityKind::Role,
                name: name.to_owned(),
            });
        }
        let role = BackendRole {
            id: state.fresh_id("role"),
            name: name.to_owned(),
        };
        state.roles.insert(role.id.clone(), role.clone());
        Ok(role)
    }

    fn users_create(
        &self,
        spec: &LocalUserSpec,
        mail: Option<&str>,
    ) -> Result<BackendUser, BackendError> {
        if spec.name.is_empty() {
            return Err(BackendError::InvalidRequest("user name is empty".into()));
        }
        let mut state = self.lock();
        if state
            .users
            .values()
            .any(|u| u.name == spec.name && u.domain_id == spec.domain_id)
        {
            return Err(BackendError::Conflict {
                kind: EntityKind::User,
                name: spec.name.clone(),
            });
        }
        let user = BackendUser {
            id: state.fresh_id("user"),
            name: spec.name.clone(),
            domain_id: spec.domain_id.clone(),
            mail: mail.map(str::to_owned),
            enabled: true,
        };
        state.users.insert(user.id.clone(), user.clone());
        Ok(user)
    }

    fn roles_grant(
        &self,
        user_id: &str,
        role_id: &str,
        project_id: &str,
    ) -> Result<(), BackendError> {
        let mut state = self.lock();
        state.require_grant_ids(user_id, role_id, project_id)?;
        state
            .grants
            .insert(RoleGrant::new(user_id, role_id, project_id));
        Ok(())
    }

    fn roles_revoke(
        &self,
        user_id: &str,
        role_id: &str,
        project_id: &str,
    ) -> Result<(), BackendError> {
        let mut state = self.lock();
        state.require_grant_ids(user_id, role_id, project_id)?;
        state
            .grants
            .remove(&RoleGrant::new(user_id, role_id, project_id));
        Ok(())
    }

    fn users_update(
        &self,
        user_id: &str,
        update: &UserUpdate,
    ) -> Result<BackendUser, BackendError> {
        let mut state = self.lock();
        let user = state
            .users
            .get_mut(user_id)
            .ok_or_else(|| BackendError::UnknownEntity {
                kind: EntityKind::User,
                id: user_id.to_owned(),
            })?;
        if let Some(mail) = &update.mail {
            user.mail = Some(mail.clone());
        }
        if let Some(enabled) = update.enabled {
            user.enabled = enabled;
        }
        Ok(user.clone())
    }
}

use std::sync::{Mutex, MutexGuard};

use super::{
    BackendError, BackendProject, BackendRole, BackendUser, IdentityBackend, Operation, RoleScope,
    UserUpdate,
};
use crate::mapping::LocalUserSpec;

/// Records every operation invoked on the wrapped backend, in call order.
#[derive(Debug)]
pub struct RecordingBackend<B> {
    inner: B,
    calls: Mutex<Vec<Operation>>,
}

impl<B: IdentityBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn log(&self) -> MutexGuard<'_, Vec<Operation>> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn record(&self, op: Operation) {
        self.log().push(op);
    }

    pub fn calls(&self) -> Vec<Operation> {
        self.log().clone()
    }

    pub fn call_count(&self) -> usize {
        self.log().len()
    }

    /// Calls recorded since position `from`.
    pub fn calls_since(&self, from: usize) -> Vec<Operation> {
        self.log().get(from..).map(<[_]>::to_vec).unwrap_or_default()
    }

    pub fn clear(&self) {
        self.log().clear();
    }
}

impl<B: IdentityBackend> IdentityBackend for RecordingBackend<B> {
    fn users_list(&self) -> Result<Vec<BackendUser>, BackendError> {
        self.record(Operation::UsersList);
        self.inner.users_list()
    }

    fn roles_list(&self, scope: &RoleScope) -> Result<Vec<BackendRole>, BackendError> {
        self.record(Operation::RolesList);
        self.inner.roles_list(scope)
    }

    fn projects_list(&self) -> Result<Vec<BackendProject>, BackendError> {
        self.record(Operation::ProjectsList);
        self.inner.projects_list()
    }

    fn projects_create(&self, name: &str, domain_id: &str) -> Result<BackendProject, BackendError> {
        self.record(Operation::ProjectsCreate);
        self.inner.projects_create(name, domain_id)
    }

    fn roles_create(&self, name: &str) -> Result<BackendRole, BackendError> {
        self.record(Operation::RolesCreate);
        self.inner.roles_create(name)
    }

    fn users_create(&self, spec: &LocalUserSpec, mail: Option<&str>) -> Result<BackendUser, BackendError> {
        self.record(Operation::UsersCreate);
        self.inner.users_create(spec, mail)
    }

    fn roles_grant(&self, user_id: &str, role_id: &str, project_id: &str) -> Result<(), BackendError> {
        self.record(Operation::RolesGrant);
        self.inner.roles_grant(user_id, role_id, project_id)
    }

    fn roles_revoke(&self, user_id: &str, role_id: &str, project_id: &str) -> Result<(), BackendError> {
        self.record(Operation::RolesRevoke);
        self.inner.roles_revoke(user_id, role_id, project_id)
    }

    fn users_update(&self, user_id: &str, update: &UserUpdate) -> Result<BackendUser, BackendError> {
        self.record(Operation::UsersUpdate);
        self.inner.users_update(user_id, update)
    }
}

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use super::{
    BackendError, BackendProject, BackendRole, BackendUser, IdentityBackend, RoleScope, UserUpdate,
};
use crate::mapping::LocalUserSpec;

/// Failure injection: every call fails with [`BackendError::Unavailable`]
/// once the call budget is spent or the backend is switched off.
#[derive(Debug)]
pub struct FaultyBackend<B> {
    inner: B,
    budget: AtomicUsize,
    available: AtomicBool,
}

impl<B: IdentityBackend> FaultyBackend<B> {
    /// Allows `calls` successful calls, then fails everything.
    pub fn fail_after(inner: B, calls: usize) -> Self {
        Self {
            inner,
            budget: AtomicUsize::new(calls),
            available: AtomicBool::new(true),
        }
    }

    pub fn unavailable(inner: B) -> Self {
        Self::fail_after(inner, 0)
    }

    pub fn healthy(inner: B) -> Self {
        Self::fail_after(inner, usize::MAX)
    }

    pub fn set_available(&self, available: bool) {
        self.available.store(available, Ordering::SeqCst);
        if available {
            self.budget.store(usize::MAX, Ordering::SeqCst);
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn admit(&self) -> Result<(), BackendError> {
        if !self.available.load(Ordering::SeqCst) {
            return Err(BackendError::Unavailable("backend switched off".into()));
        }
        self.budget
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |left| left.checked_sub(1))
            .map(|_| ())
            .map_err(|_| BackendError::Unavailable("connection refused".into()))
    }
}

impl<B: IdentityBackend> IdentityBackend for FaultyBackend<B> {
    fn users_list(&self) -> Result<Vec<BackendUser>, BackendError> {
        self.admit()?;
        self.inner.users_list()
    }

    fn roles_list(&self, scope: &RoleScope) -> Result<Vec<BackendRole>, BackendError> {
        self.admit()?;
        self.inner.roles_list(scope)
    }

    fn projects_list(&self) -> Result<Vec<BackendProject>, BackendError> {
        self.admit()?;
        self.inner.projects_list()
    }

    fn projects_create(&self, name: &str, domain_id: &str) -> Result<BackendProject, BackendError> {
        self.admit()?;
        self.inner.projects_create(name, domain_id)
    }

    fn roles_create(&self, name: &str) -> Result<BackendRole, BackendError> {
        self.admit()?;
        self.inner.roles_create(name)
    }

    fn users_create(&self, spec: &LocalUserSpec, mail: Option<&str>) -> Result<BackendUser, BackendError> {
        self.admit()?;
        self.inner.users_create(spec, mail)
    }

    fn roles_grant(&self, user_id: &str, role_id: &str, project_id: &str) -> Result<(), BackendError> {
        self.admit()?;
        self.inner.roles_grant(user_id, role_id, project_id)
    }

    fn roles_revoke(&self, user_id: &str, role_id: &str, project_id: &str) -> Result<(), BackendError> {
        self.admit()?;
        self.inner.roles_revoke(user_id, role_id, project_id)
    }

    fn users_update(&self, user_id: &str, update: &UserUpdate) -> Result<BackendUser, BackendError> {
        self.admit()?;
        self.inner.users_update(user_id, update)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    #[test]
    fn fails_once_budget_is_spent() {
        let backend = FaultyBackend::fail_after(MockBackend::new(), 2);
        assert!(backend.users_list().is_ok());
        assert!(backend.projects_list().is_ok());
        assert!(matches!(backend.users_list(), Err(BackendError::Unavailable(_))));
        backend.set_available(true);
        assert!(backend.users_list().is_ok());
        backend.set_available(false);
        assert!(backend.roles_create("r").is_err());
        assert!(backend.inner().state().roles.is_empty());
    }
}

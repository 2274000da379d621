use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use super::ledger::{GrantAction, GrantsLedger, LedgerError};
use super::{EntityRef, PlanStep, ProvisioningPlan};
use crate::backend::{BackendError, EntityKind, IdentityBackend, RoleScope, UserUpdate};
use crate::entitlement::Assignment;
use crate::mapping::LocalUserSpec;

#[derive(Debug, Error)]
pub enum ExecutionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("{kind} `{name}` could not be resolved")]
    Unresolved { kind: EntityKind, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "snake_case")]
pub enum StepOutcome {
    Applied,
    /// The entity already existed (a concurrent login created it); it was
    /// resolved with a fresh list call.
    ConflictResolved,
    /// Revocation of a grant whose project or role no longer exists; only
    /// the ledger was updated.
    LedgerOnly,
    Failed(String),
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub step: PlanStep,
    pub outcome: StepOutcome,
}

#[derive(Debug, Serialize)]
pub struct ExecutionReport {
    pub steps: Vec<StepReport>,
    #[serde(skip)]
    pub error: Option<ExecutionError>,
}

impl ExecutionReport {
    pub fn is_success(&self) -> bool {
        self.error.is_none()
    }

    pub fn outcomes(&self) -> Vec<&StepOutcome> {
        self.steps.iter().map(|s| &s.outcome).collect()
    }

    pub fn into_result(self) -> Result<Vec<StepReport>, ExecutionError> {
        match self.error {
            None => Ok(self.steps),
            Some(e) => Err(e),
        }
    }
}

#[derive(Default)]
struct Resolved {
    users: HashMap<String, String>,
    projects: HashMap<String, String>,
    roles: HashMap<String, String>,
}

impl Resolved {
    fn table(&mut self, kind: EntityKind) -> &mut HashMap<String, String> {
        match kind {
            EntityKind::User => &mut self.users,
            EntityKind::Project => &mut self.projects,
            EntityKind::Role => &mut self.roles,
        }
    }

    fn id(&mut self, kind: EntityKind, r: &EntityRef) -> Result<Option<String>, ExecutionError> {
        match r {
            EntityRef::Existing { id, .. } => Ok(Some(id.clone())),
            EntityRef::New { name } => self
                .table(kind)
                .get(name)
                .cloned()
                .map(Some)
                .ok_or_else(|| ExecutionError::Unresolved {
                    kind,
                    name: name.clone(),
                }),
            EntityRef::Absent { .. } => Ok(None),
        }
    }
}

fn apply(
    step: &PlanStep,
    backend: &dyn IdentityBackend,
    ledger: &GrantsLedger,
    resolved: &mut Resolved,
) -> Result<StepOutcome, ExecutionError> {
    match step {
        PlanStep::CreateProject { name, domain_id } => {
            let (id, outcome) = match backend.projects_create(name, domain_id) {
                Ok(p) => (p.id, StepOutcome::Applied),
                Err(BackendError::Conflict { .. }) => {
                    let id = backend
                        .projects_list()?
                        .into_iter()
                        .find(|p| &p.name == name && &p.domain_id == domain_id)
                        .map(|p| p.id);
                    (unresolved(EntityKind::Project, name, id)?, StepOutcome::ConflictResolved)
                }
                Err(e) => return Err(e.into()),
            };
            resolved.projects.insert(name.clone(), id);
            Ok(outcome)
        }
        PlanStep::CreateRole { name } => {
            let (id, outcome) = match backend.roles_create(name) {
                Ok(r) => (r.id, StepOutcome::Applied),
                Err(BackendError::Conflict { .. }) => {
                    let id = backend
                        .roles_list(&RoleScope::All)?
                        .into_iter()
                        .find(|r| &r.name == name)
                        .map(|r| r.id);
                    (unresolved(EntityKind::Role, name, id)?, StepOutcome::ConflictResolved)
                }
                Err(e) => return Err(e.into()),
            };
            resolved.roles.insert(name.clone(), id);
            Ok(outcome)
        }
        PlanStep::CreateUser {
            name,
            domain_id,
            user_type,
            mail,
        } => {
            let spec = LocalUserSpec {
                name: name.clone(),
                domain_id: domain_id.clone(),
                user_type: user_type.clone(),
            };
            let (id, outcome) = match backend.users_create(&spec, mail.as_deref()) {
                Ok(u) => (u.id, StepOutcome::Applied),
                Err(BackendError::Conflict { .. }) => {
                    let id = backend
                        .users_list()?
                        .into_iter()
                        .find(|u| &u.name == name && &u.domain_id == domain_id)
                        .map(|u| u.id);
                    (unresolved(EntityKind::User, name, id)?, StepOutcome::ConflictResolved)
                }
                Err(e) => return Err(e.into()),
            };
            resolved.users.insert(name.clone(), id);
            Ok(outcome)
        }
        PlanStep::Grant {
            user,
            project,
            role,
        } => {
            let ids = (
                resolved.id(EntityKind::User, user)?,
                resolved.id(EntityKind::Project, project)?,
                resolved.id(EntityKind::Role, role)?,
            );
            let (Some(u), Some(p), Some(r)) = ids else {
                return Err(ExecutionError::Unresolved {
                    kind: EntityKind::Project,
                    name: format!("{}/{}", project.name(), role.name()),
                });
            };
            backend.roles_grant(&u, &r, &p)?;
            ledger.record(
                user.name(),
                &Assignment::new(project.name(), role.name()),
                GrantAction::Granted,
            )?;
            Ok(StepOutcome::Applied)
        }
        PlanStep::UpdateMail { user, mail } => {
            let id = resolved
                .id(EntityKind::User, user)?
                .ok_or_else(|| ExecutionError::Unresolved {
                    kind: EntityKind::User,
                    name: user.name().to_owned(),
                })?;
            backend.users_update(
                &id,
                &UserUpdate {
                    mail: Some(mail.clone()),
                    enabled: None,
                },
            )?;
            Ok(StepOutcome::Applied)
        }
        PlanStep::Revoke {
            user,
            project,
            role,
        } => {
            let ids = (
                resolved.id(EntityKind::User, user)?,
                resolved.id(EntityKind::Project, project)?,
                resolved.id(EntityKind::Role, role)?,
            );
            let outcome = match ids {
                (Some(u), Some(p), Some(r)) => {
                    backend.roles_revoke(&u, &r, &p)?;
                    StepOutcome::Applied
                }
                _ => StepOutcome::LedgerOnly,
            };
            ledger.record(
                user.name(),
                &Assignment::new(project.name(), role.name()),
                GrantAction::Revoked,
            )?;
            Ok(outcome)
        }
    }
}

fn unresolved(kind: EntityKind, name: &str, id: Option<String>) -> Result<String, ExecutionError> {
    id.ok_or_else(|| ExecutionError::Unresolved {
        kind,
        name: name.to_owned(),
    })
}

/// Executes `plan` step by step. The first error stops execution; later
/// steps are reported as skipped. Running the whole pipeline again
/// converges because every step is idempotent.
pub fn execute_plan(
    plan: &ProvisioningPlan,
    backend: &dyn IdentityBackend,
    ledger: &GrantsLedger,
) -> ExecutionReport {
    let mut resolved = Resolved::default();
    let mut steps = Vec::with_capacity(plan.steps.len());
    let mut error = None;
    for step in &plan.steps {
        let outcome = if error.is_some() {
            StepOutcome::Skipped
        } else {
            match apply(step, backend, ledger, &mut resolved) {
                Ok(outcome) => outcome,
                Err(e) => {
                    tracing::warn!(%step, "provisioning step failed: {e}");
                    let outcome = StepOutcome::Failed(e.to_string());
                    error = Some(e);
                    outcome
                }
            }
        };
        steps.push(StepReport {
            step: step.clone(),
            outcome,
        });
    }
    ExecutionReport { steps, error }
}

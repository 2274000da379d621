//! Reconciles a backend snapshot with the state implied by a login.
//!
//! [`compute_plan`] is pure: it compares what the backend holds with the
//! [`DesiredState`] and emits the missing creates and grants, a mail update
//! when the released mail changed, and revocations for grants this service
//! made earlier that are no longer entitled. Steps are ordered
//! CreateProject, CreateRole, CreateUser, Grant, UpdateMail, Revoke so every
//! reference is valid when executed and destructive steps come last.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendSnapshot, RoleGrant};
use crate::entitlement::{Assignment, DesiredState};

mod execute;
mod ledger;

pub use execute::{execute_plan, ExecutionError, ExecutionReport, StepOutcome, StepReport};
pub use ledger::{GrantAction, GrantsLedger, LedgerEntry, LedgerError, LiveGrant};

/// Reference to a backend entity from a plan step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum EntityRef {
    Existing { id: String, name: String },
    /// Created by an earlier step of the same plan.
    New { name: String },
    /// Not in the backend and not created by the plan. Only appears in
    /// revocations of ledger grants whose project or role has since gone.
    Absent { name: String },
}

impl EntityRef {
    pub fn name(&self) -> &str {
        match self {
            EntityRef::Existing { name, .. }
            | EntityRef::New { name }
            | EntityRef::Absent { name } => name,
        }
    }
}

impl fmt::Display for EntityRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityRef::Existing { id, name } => write!(f, "{name} ({id})"),
            EntityRef::New { name } => write!(f, "{name} (new)"),
            EntityRef::Absent { name } => write!(f, "{name} (absent)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PlanStep {
    CreateProject {
        name: String,
        domain_id: String,
    },
    CreateRole {
        name: String,
    },
    CreateUser {
        name: String,
        domain_id: String,
        user_type: String,
        mail: Option<String>,
    },
    Grant {
        user: EntityRef,
        project: EntityRef,
        role: EntityRef,
    },
    UpdateMail {
        user: EntityRef,
        mail: String,
    },
    Revoke {
        user: EntityRef,
        project: EntityRef,
        role: EntityRef,
    },
}

impl PlanStep {
    fn rank(&self) -> u8 {
        match self {
            PlanStep::CreateProject { .. } => 0,
            PlanStep::CreateRole { .. } => 1,
            PlanStep::CreateUser { .. } => 2,
            PlanStep::Grant { .. } => 3,
            PlanStep::UpdateMail { .. } => 4,
            PlanStep::Revoke { .. } => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PlanStep::CreateProject { .. } => "CreateProject",
            PlanStep::CreateRole { .. } => "CreateRole",
            PlanStep::CreateUser { .. } => "CreateUser",
            PlanStep::Grant { .. } => "Grant",
            PlanStep::UpdateMail { .. } => "UpdateMail",
            PlanStep::Revoke { .. } => "Revoke",
        }
    }
}

impl fmt::Display for PlanStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanStep::CreateProject { name, domain_id } => {
                write!(f, "CreateProject {name} in domain {domain_id}")
            }
            PlanStep::CreateRole { name } => write!(f, "CreateRole {name}"),
            PlanStep::CreateUser {
                name, domain_id, ..
            } => write!(f, "CreateUser {name} in domain {domain_id}"),
            PlanStep::Grant {
                user,
                project,
                role,
            } => write!(f, "Grant {} {} on {}", user.name(), role.name(), project.name()),
            PlanStep::UpdateMail { user, mail } => {
                write!(f, "UpdateMail {} -> {mail}", user.name())
            }
            PlanStep::Revoke {
                user,
                project,
                role,
            } => write!(f, "Revoke {} {} on {}", user.name(), role.name(), project.name()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisioningPlan {
    pub steps: Vec<PlanStep>,
}

impl ProvisioningPlan {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    /// Checks the ordering invariants. Returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        let mut created_projects = BTreeSet::new();
        let mut created_roles = BTreeSet::new();
        let mut created_users = BTreeSet::new();
        let mut last_rank = 0;
        for (i, step) in self.steps.iter().enumerate() {
            if !seen.insert(step) {
                return Err(format!("step {i} duplicates an earlier step: {step}"));
            }
            if step.rank() < last_rank {
                return Err(format!("step {i} ({}) is out of order", step.kind()));
            }
            last_rank = step.rank();
            match step {
                PlanStep::CreateProject { name, .. } => {
                    created_projects.insert(name.as_str());
                }
                PlanStep::CreateRole { name } => {
                    created_roles.insert(name.as_str());
                }
                PlanStep::CreateUser { name, .. } => {
                    created_users.insert(name.as_str());
                }
                PlanStep::Grant {
                    user,
                    project,
                    role,
                }
                | PlanStep::Revoke {
                    user,
                    project,
                    role,
                } => {
                    let refs = [
                        (user, &created_users),
                        (project, &created_projects),
                        (role, &created_roles),
                    ];
                    for (r, created) in refs {
                        match r {
                            EntityRef::New { name } if !created.contains(name.as_str()) => {
                                return Err(format!("step {i} references {name} before creation"));
                            }
                            EntityRef::Absent { name } if matches!(step, PlanStep::Grant { .. }) => {
                                return Err(format!("step {i} grants on absent entity {name}"));
                            }
                            _ => {}
                        }
                    }
                }
                PlanStep::UpdateMail { user, .. } => {
                    if let EntityRef::New { name } = user {
                        if !created_users.contains(name.as_str()) {
                            return Err(format!("step {i} updates {name} before creation"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ProvisioningPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return writeln!(f, "plan: empty");
        }
        writeln!(f, "plan: {} step(s)", self.steps.len())?;
        for (i, step) in self.steps.iter().enumerate() {
            writeln!(f, "  {:>2}. {step}", i + 1)?;
        }
        Ok(())
    }
}

/// Computes the steps that bring the backend to `desired`.
///
/// `ledger` bounds revocation: only assignments live in the ledger for this
/// user and absent from `desired` are revoked.
pub fn compute_plan(
    snapshot: &BackendSnapshot,
    desired: &DesiredState,
    ledger: &GrantsLedger,
) -> ProvisioningPlan {
    compute_plan_with_live(snapshot, desired, &ledger.live_for(&desired.user.name))
}

/// As [`compute_plan`], with the user's live ledger assignments supplied
/// directly.
pub fn compute_plan_with_live(
    snapshot: &BackendSnapshot,
    desired: &DesiredState,
    live: &BTreeSet<Assignment>,
) -> ProvisioningPlan {
    let domain = desired.user.domain_id.as_str();
    let mut steps = Vec::new();

    let projects: BTreeSet<&str> = desired
        .assignments
        .iter()
        .map(|a| a.project.as_str())
        .collect();
    for name in &projects {
        if snapshot.project(name, domain).is_none() {
            steps.push(PlanStep::CreateProject {
                name: (*name).to_owned(),
                domain_id: domain.to_owned(),
            });
        }
    }

    let roles: BTreeSet<&str> = desired.assignments.iter().map(|a| a.role.as_str()).collect();
    for name in &roles {
        if snapshot.role(name).is_none() {
            steps.push(PlanStep::CreateRole {
                name: (*name).to_owned(),
            });
        }
    }

    let existing_user = snapshot.user(&desired.user.name, domain);
    let user_ref = match existing_user {
        Some(u) => EntityRef::Existing {
            id: u.id.clone(),
            name: u.name.clone(),
        },
        None => {
            steps.push(PlanStep::CreateUser {
                name: desired.user.name.clone(),
                domain_id: domain.to_owned(),
                user_type: desired.user.user_type.clone(),
                mail: desired.mail.clone(),
            });
            EntityRef::New {
                name: desired.user.name.clone(),
            }
        }
    };

    let project_ref = |name: &str, missing: fn(String) -> EntityRef| match snapshot
        .project(name, domain)
    {
        Some(p) => EntityRef::Existing {
            id: p.id.clone(),
            name: p.name.clone(),
        },
        None => missing(name.to_owned()),
    };
    let role_ref = |name: &str, missing: fn(String) -> EntityRef| match snapshot.role(name) {
        Some(r) => EntityRef::Existing {
            id: r.id.clone(),
            name: r.name.clone(),
        },
        None => missing(name.to_owned()),
    };
    let new = |name| EntityRef::New { name };
    let absent = |name| EntityRef::Absent { name };

    for a in &desired.assignments {
        let project = project_ref(&a.project, new);
        let role = role_ref(&a.role, new);
        let present = match (&user_ref, &project, &role) {
            (
                EntityRef::Existing { id: u, .. },
                EntityRef::Existing { id: p, .. },
                EntityRef::Existing { id: r, .. },
            ) => snapshot.grants.contains(&RoleGrant::new(u, r, p)),
            _ => false,
        };
        if !present {
            steps.push(PlanStep::Grant {
                user: user_ref.clone(),
                project,
                role,
            });
        }
    }

    if let (Some(user), Some(mail)) = (existing_user, &desired.mail) {
        if user.mail.as_ref() != Some(mail) {
            steps.push(PlanStep::UpdateMail {
                user: user_ref.clone(),
                mail: mail.clone(),
            });
        }
    }

    for a in live.difference(&desired.assignments) {
        steps.push(PlanStep::Revoke {
            user: user_ref.clone(),
            project: project_ref(&a.project, absent),
            role: role_ref(&a.role, absent),
        });
    }

    ProvisioningPlan { steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendProject, BackendRole, BackendUser};
    use crate::mapping::LocalUserSpec;

    fn desired(assignments: &[(&str, &str)], mail: Option<&str>) -> DesiredState {
        DesiredState {
            user: LocalUserSpec {
                name: "alice".into(),
                domain_id: "default".into(),
                user_type: "local".into(),
            },
            assignments: assignments
                .iter()
                .map(|(p, r)| Assignment::new(*p, *r))
                .collect(),
            mail: mail.map(str::to_owned),
            warnings: vec![],
        }
    }

    fn provisioned(mail: Option<&str>) -> BackendSnapshot {
        BackendSnapshot {
            users: vec![BackendUser {
                id: "u1".into(),
                name: "alice".into(),
                domain_id: "default".into(),
                mail: mail.map(str::to_owned),
                enabled: true,
            }],
            projects: vec![BackendProject {
                id: "p1".into(),
                name: "projA".into(),
                domain_id: "default".into(),
            }],
            roles: vec![
                BackendRole {
                    id: "r1".into(),
                    name: "admin".into(),
                },
                BackendRole {
                    id: "r2".into(),
                    name: "r2".into(),
                },
            ],
            grants: BTreeSet::from([RoleGrant::new("u1", "r1", "p1")]),
        }
    }

    #[test]
    fn fresh_backend_gets_four_ordered_steps() {
        let plan = compute_plan(
            &BackendSnapshot::default(),
            &desired(&[("projA", "admin")], None),
            &GrantsLedger::in_memory(),
        );
        let kinds: Vec<_> = plan.steps.iter().map(PlanStep::kind).collect();
        assert_eq!(kinds, ["CreateProject", "CreateRole", "CreateUser", "Grant"]);
        assert_eq!(
            plan.steps[3],
            PlanStep::Grant {
                user: EntityRef::New {
                    name: "alice".into()
                },
                project: EntityRef::New {
                    name: "projA".into()
                },
                role: EntityRef::New {
                    name: "admin".into()
                },
            }
        );
        plan.validate().unwrap();
    }

    #[test]
    fn matching_state_gives_empty_plan() {
        let plan = compute_plan(
            &provisioned(Some("a@x")),
            &desired(&[("projA", "admin")], Some("a@x")),
            &GrantsLedger::in_memory(),
        );
        assert!(plan.is_empty());
        assert_eq!(plan.to_string(), "plan: empty\n");
    }

    #[test]
    fn changed_mail_is_updated() {
        let plan = compute_plan(
            &provisioned(Some("a@x")),
            &desired(&[("projA", "admin")], Some("b@x")),
            &GrantsLedger::in_memory(),
        );
        assert_eq!(
            plan.steps,
            vec![PlanStep::UpdateMail {
                user: EntityRef::Existing {
                    id: "u1".into(),
                    name: "alice".into()
                },
                mail: "b@x".into()
            }]
        );
        // absent mail never clears a stored one
        let plan = compute_plan(
            &provisioned(Some("a@x")),
            &desired(&[("projA", "admin")], None),
            &GrantsLedger::in_memory(),
        );
        assert!(plan.is_empty());
    }

    #[test]
    fn revokes_only_ledger_grants() {
        let ledger = GrantsLedger::in_memory();
        ledger
            .record("alice", &Assignment::new("projA", "r2"), GrantAction::Granted)
            .unwrap();
        let plan = compute_plan(&provisioned(None), &desired(&[("projA", "r1")], None), &ledger);
        let kinds: Vec<_> = plan.steps.iter().map(PlanStep::kind).collect();
        // r1 does not exist yet; admin grant u1/r1/p1 is not in the ledger and stays
        assert_eq!(kinds, ["CreateRole", "Grant", "Revoke"]);
        match &plan.steps[2] {
            PlanStep::Revoke { role, project, .. } => {
                assert_eq!(role.name(), "r2");
                assert_eq!(project.name(), "projA");
            }
            other => panic!("{other:?}"),
        }
        plan.validate().unwrap();
    }

    #[test]
    fn revoking_a_vanished_project_is_ledger_only() {
        let ledger = GrantsLedger::in_memory();
        ledger
            .record("alice", &Assignment::new("gone", "admin"), GrantAction::Granted)
            .unwrap();
        let plan = compute_plan(&provisioned(None), &desired(&[("projA", "admin")], None), &ledger);
        assert_eq!(
            plan.steps,
            vec![PlanStep::Revoke {
                user: EntityRef::Existing {
                    id: "u1".into(),
                    name: "alice".into()
                },
                project: EntityRef::Absent {
                    name: "gone".into()
                },
                role: EntityRef::Existing {
                    id: "r1".into(),
                    name: "admin".into()
                },
            }]
        );
    }

    #[test]
    fn validate_catches_bad_orderings() {
        let grant = PlanStep::Grant {
            user: EntityRef::New { name: "u".into() },
            project: EntityRef::Existing {
                id: "p".into(),
                name: "p".into(),
            },
            role: EntityRef::Existing {
                id: "r".into(),
                name: "r".into(),
            },
        };
        let create = PlanStep::CreateUser {
            name: "u".into(),
            domain_id: "d".into(),
            user_type: "local".into(),
            mail: None,
        };
        assert!(ProvisioningPlan {
            steps: vec![grant.clone()]
        }
        .validate()
        .is_err());
        assert!(ProvisioningPlan {
            steps: vec![grant.clone(), create.clone()]
        }
        .validate()
        .is_err());
        assert!(ProvisioningPlan {
            steps: vec![create.clone(), grant.clone(), grant.clone()]
        }
        .validate()
        .is_err());
        assert!(ProvisioningPlan {
            steps: vec![create, grant]
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn plan_json_shape() {
        let plan = compute_plan(
            &BackendSnapshot::default(),
            &desired(&[("projA", "admin")], None),
            &GrantsLedger::in_memory(),
        );
        let json = serde_json::to_value(&plan).unwrap();
        assert_eq!(json["steps"][0]["kind"], "CreateProject");
        assert_eq!(json["steps"][3]["user"]["state"], "new");
        let back: ProvisioningPlan = serde_json::from_value(json).unwrap();
        assert_eq!(back, plan);
    }
}

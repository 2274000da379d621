//! Federated identity provisioning gateway.
//!
//! A SAML middleware authenticates the user and calls the session hook with
//! the released attributes; the hook maps them to a backend user plus
//! project/role assignments, provisions them idempotently through a
//! nine-operation identity API, and resumes the login. The [`harness`]
//! module simulates the whole federated login end to end.

pub mod attributes;
pub mod backend;
pub mod clock;
pub mod entitlement;
pub mod harness;
pub mod hook;
pub mod mapping;
pub mod planner;

pub use attributes::{extract_bundle, AttributeBundle, AttributeConfig};
pub use backend::{IdentityBackend, MockBackend, Operation};
pub use entitlement::{derive_desired_state, parse_entitlement, Assignment, DesiredState};
pub use hook::{HookService, ServiceConfig};
pub use mapping::{apply_rules, parse_mapping_rules, LocalUserSpec, MappingRules};
pub use planner::{compute_plan, execute_plan, GrantsLedger, ProvisioningPlan};

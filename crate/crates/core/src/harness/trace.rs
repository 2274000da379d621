use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::Operation;
use crate::planner::ProvisioningPlan;

/// The thirteen steps of the federated login, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkflowStep {
    I,
    Ii,
    Iii,
    Iv,
    V,
    Vi,
    Vii,
    Viii,
    Ix,
    X,
    Xi,
    Xii,
    Xiii,
}

impl WorkflowStep {
    pub const ALL: [WorkflowStep; 13] = [
        WorkflowStep::I,
        WorkflowStep::Ii,
        WorkflowStep::Iii,
        WorkflowStep::Iv,
        WorkflowStep::V,
        WorkflowStep::Vi,
        WorkflowStep::Vii,
        WorkflowStep::Viii,
        WorkflowStep::Ix,
        WorkflowStep::X,
        WorkflowStep::Xi,
        WorkflowStep::Xii,
        WorkflowStep::Xiii,
    ];

    pub fn label(self) -> &'static str {
        match self {
            WorkflowStep::I => "i",
            WorkflowStep::Ii => "ii",
            WorkflowStep::Iii => "iii",
            WorkflowStep::Iv => "iv",
            WorkflowStep::V => "v",
            WorkflowStep::Vi => "vi",
            WorkflowStep::Vii => "vii",
            WorkflowStep::Viii => "viii",
            WorkflowStep::Ix => "ix",
            WorkflowStep::X => "x",
            WorkflowStep::Xi => "xi",
            WorkflowStep::Xii => "xii",
            WorkflowStep::Xiii => "xiii",
        }
    }
}

impl fmt::Display for WorkflowStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.label())
    }
}

/// Simulated entity that produced an event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum Actor {
    Browser,
    Horizon,
    KeystoneSp,
    Keystone,
    Discovery,
    Idp(String),
    Aa(String),
    HookService,
    Portal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Navigate { url: String },
    Redirect { location: String },
    DiscoveryPage { idps: Vec<String> },
    IdpSelected { idp: String },
    DiscoveryRefused { idp: String },
    LoginPage,
    IdpLogin { principal: String },
    AttributeQueryPhase { authorities: usize },
    AttributeQuery { authority: String, latency_ms: u64, released: usize },
    AttributesMerged { attributes: Vec<String> },
    SessionHook { location: String },
    ConsentPage,
    ConsentDecision { decision: String },
    BackendCall { operation: Operation },
    PlanComputed { steps: usize },
    CreateUser { user: String },
    HookResumed { location: String },
    HookDenied { reason: String },
    HookFailed { status: u16, message: String },
    AttributesDelivered { attributes: Vec<String> },
    KeystoneAuth { user: String },
    KeystoneAuthFailed { user: String },
    TokenIssued { user: String, token: String },
    HorizonSession { user: String },
    Landed { url: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: Option<WorkflowStep>,
    pub actor: Actor,
    pub action: Action,
    pub sim_time_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TokenIssued,
    ConsentAbandoned,
    /// The user left the consent page without deciding.
    ConsentPending,
    DeniedNoEntitlement,
    BackendError,
    /// The IdP is not in the federation metadata.
    DiscoveryRefused,
    /// The hook rejected the request (e.g. missing identifier).
    HookRejected,
    /// Keystone refused an unprovisioned user. Never expected.
    KeystoneDenied,
    /// The browser exceeded its redirect budget.
    Stalled,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioTrace {
    pub scenario: String,
    pub seed: u64,
    pub principal: String,
    /// Backend users present before this login started.
    pub preexisting_users: Vec<String>,
    pub events: Vec<TraceEvent>,
    pub outcome: Outcome,
    /// Status and message of the error page that ended the login, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub total_login_latency_ms: u64,
    /// Sum of the attribute-authority round trips.
    pub aa_latency_ms: u64,
    /// Everything except the attribute-authority queries.
    pub base_latency_ms: u64,
    pub warnings: Vec<String>,
    /// Operations the hook service invoked on the backend during this login.
    pub backend_operations: Vec<Operation>,
    /// The provisioning plan executed during this login, if any.
    pub plan: Option<ProvisioningPlan>,
}

impl ScenarioTrace {
    pub fn steps(&self) -> Vec<WorkflowStep> {
        let mut steps: Vec<WorkflowStep> = Vec::new();
        for step in self.events.iter().filter_map(|e| e.step) {
            if steps.last() != Some(&step) {
                steps.push(step);
            }
        }
        steps
    }

    pub fn has_step(&self, step: WorkflowStep) -> bool {
        self.events.iter().any(|e| e.step == Some(step))
    }

    pub fn position(&self, pred: impl Fn(&Action) -> bool) -> Option<usize> {
        self.events.iter().position(|e| pred(&e.action))
    }
}

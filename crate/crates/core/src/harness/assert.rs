use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::scenario::Scenario;
use super::trace::{Action, Outcome, ScenarioTrace, WorkflowStep};
use super::MAX_PRACTICAL_AAS;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Expectations {
    pub outcome: Option<Outcome>,
    /// Configured AA latencies, in chain order.
    pub aa_latencies: Option<Vec<u64>>,
    pub min_latency_ms: Option<u64>,
    pub max_latency_ms: Option<u64>,
}

impl Expectations {
    pub fn for_scenario(scenario: &Scenario) -> Self {
        Self {
            outcome: Some(scenario.expected_outcome),
            aa_latencies: Some(scenario.aa_chain.iter().map(|a| a.latency_ms).collect()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

fn violation(kind: &'static str, detail: impl Into<String>) -> Violation {
    Violation {
        kind,
        detail: detail.into(),
    }
}

pub fn assert_trace(trace: &ScenarioTrace, expect: &Expectations) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();

    if let Some(expected) = expect.outcome {
        if trace.outcome != expected {
            out.push(violation(
                "outcome",
                format!("expected {expected}, got {}", trace.outcome),
            ));
        }
    }

    let labelled: Vec<WorkflowStep> = trace.events.iter().filter_map(|e| e.step).collect();
    if let Some(w) = labelled.windows(2).find(|w| w[1] < w[0]) {
        out.push(violation(
            "step-order",
            format!("step {} follows step {}", w[1], w[0]),
        ));
    }
    if trace.outcome == Outcome::TokenIssued {
        let seen: BTreeSet<WorkflowStep> = labelled.iter().copied().collect();
        let missing: Vec<String> = WorkflowStep::ALL
            .iter()
            .filter(|s| !seen.contains(s))
            .map(|s| s.to_string())
            .collect();
        if !missing.is_empty() {
            out.push(violation(
                "workflow-incomplete",
                format!("missing steps {}", missing.join(", ")),
            ));
        }
        let token = trace.position(|a| matches!(a, Action::TokenIssued { .. }));
        let session = trace.position(|a| matches!(a, Action::HorizonSession { .. }));
        if !matches!((token, session), (Some(t), Some(s)) if t < s) {
            out.push(violation(
                "workflow-incomplete",
                "no token issuance followed by a Horizon session",
            ));
        }
    }

    // Keystone may only see users that were provisioned earlier in this
    // trace or existed before it.
    for (i, e) in trace.events.iter().enumerate() {
        match &e.action {
            Action::KeystoneAuth { user } => {
                let created_before = trace.events[..i]
                    .iter()
                    .any(|p| matches!(&p.action, Action::CreateUser { user: u } if u == user));
                if !created_before && !trace.preexisting_users.contains(user) {
                    out.push(violation(
                        "pre-provisioning",
                        format!("keystone authenticated `{user}` before it was created"),
                    ));
                }
            }
            Action::KeystoneAuthFailed { user } => out.push(violation(
                "pre-provisioning",
                format!("keystone does not know `{user}`"),
            )),
            _ => {}
        }
    }

    if matches!(
        trace.outcome,
        Outcome::ConsentAbandoned | Outcome::ConsentPending
    ) && !trace.backend_operations.is_empty()
    {
        out.push(violation(
            "consent-containment",
            format!(
                "{} backend operation(s) without accepted consent",
                trace.backend_operations.len()
            ),
        ));
    }
    if trace.outcome == Outcome::DeniedNoEntitlement
        && trace.backend_operations.iter().any(|op| op.is_mutation())
    {
        out.push(violation(
            "default-deny",
            "backend mutated for a user without entitlements",
        ));
    }

    let queried: u64 = trace
        .events
        .iter()
        .filter_map(|e| match e.action {
            Action::AttributeQuery { latency_ms, .. } => Some(latency_ms),
            _ => None,
        })
        .sum();
    if trace.total_login_latency_ms != trace.base_latency_ms + trace.aa_latency_ms
        || queried != trace.aa_latency_ms
    {
        out.push(violation(
            "latency",
            format!(
                "total {} ms is not base {} ms + attribute queries {} ms",
                trace.total_login_latency_ms, trace.base_latency_ms, queried
            ),
        ));
    }
    if let Some(latencies) = &expect.aa_latencies {
        let reached_aas = trace.has_step(WorkflowStep::Vi);
        let configured: u64 = latencies.iter().sum();
        if reached_aas && trace.aa_latency_ms != configured {
            out.push(violation(
                "latency",
                format!(
                    "attribute queries took {} ms, configured sum is {configured} ms",
                    trace.aa_latency_ms
                ),
            ));
        }
        if reached_aas && (latencies.len() > MAX_PRACTICAL_AAS) == trace.warnings.is_empty() {
            out.push(violation(
                "practicality-warning",
                format!(
                    "{} attribute authorities, {} warning(s)",
                    latencies.len(),
                    trace.warnings.len()
                ),
            ));
        }
    }
    if let Some(min) = expect.min_latency_ms {
        if trace.total_login_latency_ms < min {
            out.push(violation(
                "latency",
                format!("total {} ms below {min} ms", trace.total_login_latency_ms),
            ));
        }
    }
    if let Some(max) = expect.max_latency_ms {
        if trace.total_login_latency_ms > max {
            out.push(violation(
                "latency",
                format!("total {} ms above {max} ms", trace.total_login_latency_ms),
            ));
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

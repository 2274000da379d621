//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fedprov_core::backend::{BackendProject, BackendRole, BackendSnapshot, BackendUser, RoleGrant};
use fedprov_core::harness::{Outcome, Scenario, DEFAULT_ENTITLEMENT_PREFIX};
use fedprov_core::planner::{GrantAction, LedgerEntry};
use fedprov_core::{Assignment, DesiredState, LocalUserSpec};
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde_json::json;

pub const DOMAIN: &str = "default";
pub const USERS: [&str; 6] = ["alice", "bob", "carol", "dave", "erin", "frank"];
pub const PROJECTS: [&str; 6] = ["projA", "projB", "projC", "projD", "projE", "projF"];
pub const ROLES: [&str; 6] = ["admin", "member", "reader", "ops", "audit", "dev"];

/// One reconciliation problem: backend state, desired state for one user,
/// and the grants ledger.
#[derive(Debug, Clone)]
pub struct Instance {
    pub snapshot: BackendSnapshot,
    pub desired: DesiredState,
    pub ledger: Vec<LedgerEntry>,
}

fn pick<'a>(rng: &mut StdRng, pool: &[&'a str], max: usize) -> Vec<&'a str> {
    let n = rng.random_range(0..=max.min(pool.len()));
    let mut v = pool.to_vec();
    v.shuffle(rng);
    v.truncate(n);
    v
}

/// At most five entities of each kind and fifteen grants.
pub fn random_instance(rng: &mut StdRng) -> Instance {
    let users: Vec<BackendUser> = pick(rng, &USERS, 5)
        .into_iter()
        .enumerate()
        .map(|(i, name)| BackendUser {
            id: format!("u{i}"),
            name: name.into(),
            domain_id: DOMAIN.into(),
            mail: [None, Some("old@x"), Some("new@x")]
                .choose(rng)
                .unwrap()
                .map(str::to_owned),
            enabled: true,
        })
        .collect();
    let projects: Vec<BackendProject> = pick(rng, &PROJECTS, 5)
        .into_iter()
        .enumerate()
        .map(|(i, name)| BackendProject {
            id: format!("p{i}"),
            name: name.into(),
            domain_id: DOMAIN.into(),
        })
        .collect();
    let roles: Vec<BackendRole> = pick(rng, &ROLES, 5)
        .into_iter()
        .enumerate()
        .map(|(i, name)| BackendRole {
            id: format!("r{i}"),
            name: name.into(),
        })
        .collect();
    let mut grants = BTreeSet::new();
    if !users.is_empty() && !projects.is_empty() && !roles.is_empty() {
        for _ in 0..rng.random_range(0..=15) {
            grants.insert(RoleGrant::new(
                &users.choose(rng).unwrap().id,
                &roles.choose(rng).unwrap().id,
                &projects.choose(rng).unwrap().id,
            ));
        }
    }
    let snapshot = BackendSnapshot {
        users,
        projects,
        roles,
        grants,
    };

    let user = *USERS.choose(rng).unwrap();
    let mut assignments = BTreeSet::new();
    for _ in 0..rng.random_range(0..=5) {
        assignments.insert(Assignment::new(
            *PROJECTS.choose(rng).unwrap(),
            *ROLES.choose(rng).unwrap(),
        ));
    }
    let desired = DesiredState {
        user: LocalUserSpec {
            name: user.into(),
            domain_id: DOMAIN.into(),
            user_type: "local".into(),
        },
        assignments,
        mail: [None, Some("old@x"), Some("new@x")]
            .choose(rng)
            .unwrap()
            .map(str::to_owned),
        warnings: vec![],
    };

    let ts = chrono::DateTime::parse_from_rfc3339("2026-01-01T00:00:00Z")
        .unwrap()
        .to_utc();
    let ledger = (0..rng.random_range(0..=10))
        .map(|_| LedgerEntry {
            user: if rng.random_bool(0.7) {
                user.into()
            } else {
                (*USERS.choose(rng).unwrap()).into()
            },
            project: (*PROJECTS.choose(rng).unwrap()).into(),
            role: (*ROLES.choose(rng).unwrap()).into(),
            action: if rng.random_bool(0.7) {
                GrantAction::Granted
            } else {
                GrantAction::Revoked
            },
            ts,
        })
        .collect();
    Instance {
        snapshot,
        desired,
        ledger,
    }
}

/// Backend state by name, ids erased.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameState {
    pub users: BTreeMap<String, Option<String>>,
    pub projects: BTreeSet<String>,
    pub roles: BTreeSet<String>,
    pub grants: BTreeSet<(String, String, String)>,
}

pub fn name_state(s: &BackendSnapshot) -> NameState {
    let user = |id: &str| s.users.iter().find(|u| u.id == id).unwrap().name.clone();
    let project = |id: &str| s.projects.iter().find(|p| p.id == id).unwrap().name.clone();
    let role = |id: &str| s.roles.iter().find(|r| r.id == id).unwrap().name.clone();
    NameState {
        users: s
            .users
            .iter()
            .map(|u| (u.name.clone(), u.mail.clone()))
            .collect(),
        projects: s.projects.iter().map(|p| p.name.clone()).collect(),
        roles: s.roles.iter().map(|r| r.name.clone()).collect(),
        grants: s
            .grants
            .iter()
            .map(|g| (user(&g.user_id), project(&g.project_id), role(&g.role_id)))
            .collect(),
    }
}

/// Replays ledger entries into the live (project, role) set of `user`.
pub fn ledger_live(entries: &[LedgerEntry], user: &str) -> BTreeSet<(String, String)> {
    let mut live = BTreeSet::new();
    for e in entries.iter().filter(|e| e.user == user) {
        let key = (e.project.clone(), e.role.clone());
        match e.action {
            GrantAction::Granted => {
                live.insert(key);
            }
            GrantAction::Revoked => {
                live.remove(&key);
            }
        }
    }
    live
}

/// The state reconciliation must reach, computed from the definitions:
/// everything desired exists, desired grants are present, ledger-live
/// grants outside desired are gone, nothing else changes.
pub fn expected_state(instance: &Instance) -> NameState {
    let mut state = name_state(&instance.snapshot);
    let d = &instance.desired;
    let user = d.user.name.clone();
    let old_mail = state.users.get(&user).cloned().flatten();
    state
        .users
        .insert(user.clone(), d.mail.clone().or(old_mail));
    let wanted: BTreeSet<(String, String)> = d
        .assignments
        .iter()
        .map(|a| (a.project.clone(), a.role.clone()))
        .collect();
    for (p, r) in &wanted {
        state.projects.insert(p.clone());
        state.roles.insert(r.clone());
    }
    for (p, r) in ledger_live(&instance.ledger, &user).difference(&wanted) {
        state.grants.remove(&(user.clone(), p.clone(), r.clone()));
    }
    for (p, r) in wanted {
        state.grants.insert((user.clone(), p, r));
    }
    state
}

/// A randomized end-to-end scenario and the outcomes it may end in.
#[derive(Debug, Clone)]
pub struct RandomScenario {
    pub scenario: Scenario,
    pub acceptable: Vec<Outcome>,
}

pub fn random_scenario(rng: &mut StdRng, index: usize) -> RandomScenario {
    let prefix = DEFAULT_ENTITLEMENT_PREFIX;
    let idps: Vec<(String, bool)> = (0..rng.random_range(1..=2))
        .map(|i| {
            (
                format!("https://idp{i}.uni.example/idp/shibboleth"),
                rng.random_bool(0.9),
            )
        })
        .collect();
    let entitlement = |rng: &mut StdRng| -> (String, bool) {
        let p = PROJECTS.choose(rng).unwrap();
        let r = ROLES.choose(rng).unwrap();
        match rng.random_range(0..10) {
            0 => (format!("urn:other:org:{p}:{r}"), false),
            1 => ("garbage".into(), false),
            _ => (format!("{prefix}:{p}:{r}"), true),
        }
    };

    let n_principals = rng.random_range(1..=3);
    let mut principals = Vec::new();
    let mut valid_count: BTreeMap<String, usize> = BTreeMap::new();
    let mut eppns = Vec::new();
    for i in 0..n_principals {
        let eppn = format!("p{i}@uni.example");
        let mut values = Vec::new();
        let mut valid = 0;
        for _ in 0..rng.random_range(0..=3) {
            let (e, ok) = entitlement(rng);
            values.push(e);
            valid += ok as usize;
        }
        let mut attributes = serde_json::Map::new();
        attributes.insert("eppn".into(), json!(eppn));
        if !values.is_empty() {
            attributes.insert("entitlement".into(), json!(values));
        }
        if rng.random_bool(0.5) {
            attributes.insert("mail".into(), json!(format!("p{i}@mail.example")));
        }
        valid_count.insert(format!("user{i}"), valid);
        principals.push(json!({
            "idp": idps[rng.random_range(0..idps.len())].0,
            "username": format!("user{i}"),
            "attributes": attributes,
        }));
        eppns.push(eppn);
    }

    let mut aa_chain = Vec::new();
    for a in 0..rng.random_range(0..=3) {
        let mut released = serde_json::Map::new();
        for (i, eppn) in eppns.iter().enumerate() {
            if rng.random_bool(0.3) {
                let (e, ok) = entitlement(rng);
                *valid_count.get_mut(&format!("user{i}")).unwrap() += ok as usize;
                released.insert(eppn.clone(), json!({"entitlement": e}));
            }
        }
        aa_chain.push(json!({
            "name": format!("aa{a}"),
            "latency_ms": rng.random_range(0..=40),
            "attributes": released,
        }));
    }

    let consent_enabled = rng.random_bool(0.5);
    let choice = *["accept", "accept", "abandon", "ignore"].choose(rng).unwrap();
    let login = format!("user{}", rng.random_range(0..n_principals));
    let preexisting: Vec<&String> = eppns.iter().filter(|_| rng.random_bool(0.2)).collect();
    let fail_after = rng.random_bool(0.15).then(|| rng.random_range(0..8usize));

    let principal = principals
        .iter()
        .find(|p| p["username"] == login.as_str())
        .unwrap();
    let listed = idps
        .iter()
        .find(|(id, _)| principal["idp"] == id.as_str())
        .unwrap()
        .1;
    let acceptable = if !listed {
        vec![Outcome::DiscoveryRefused]
    } else if valid_count[&login] == 0 {
        vec![Outcome::DeniedNoEntitlement]
    } else if consent_enabled && choice == "abandon" {
        vec![Outcome::ConsentAbandoned]
    } else if consent_enabled && choice == "ignore" {
        vec![Outcome::ConsentPending]
    } else if fail_after.is_some() {
        vec![Outcome::BackendError, Outcome::TokenIssued]
    } else {
        vec![Outcome::TokenIssued]
    };

    let mut doc = json!({
        "name": format!("random-{index}"),
        "entities": {
            "idps": idps.iter().map(|(id, listed)| json!({"entity_id": id, "latency_ms": 3, "listed": listed})).collect::<Vec<_>>(),
            "hop_latency_ms": 2,
        },
        "principals": principals,
        "aa_chain": aa_chain,
        "config_overrides": {"consent_enabled": consent_enabled},
        "login": {"principal": login, "consent": choice},
        "expected_outcome": acceptable[0],
        "preexisting_users": preexisting,
    });
    if let Some(n) = fail_after {
        doc["backend"] = json!({"fail_after": n});
    }
    RandomScenario {
        scenario: Scenario::from_json(&doc.to_string()).unwrap(),
        acceptable,
    }
}

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{closed_port, serve, Served};
use fedprov_core::backend::{
    user_snapshot, BackendError, EntityKind, IdentityBackend, RecordingBackend, RoleScope,
    UserUpdate,
};
use fedprov_core::{
    compute_plan, execute_plan, Assignment, DesiredState, GrantsLedger, LocalUserSpec,
    MockBackend, Operation,
};
use fedprov_http::{mock_router, KeystoneClient};
use proptest::prelude::*;

const TOKEN: &str = "s3cret";

fn spec(name: &str) -> LocalUserSpec {
    LocalUserSpec {
        name: name.into(),
        domain_id: "default".into(),
        user_type: "local".into(),
    }
}

fn served() -> (Arc<MockBackend>, Served, KeystoneClient) {
    let mock = Arc::new(MockBackend::new());
    let server = serve(mock_router(mock.clone(), Some(TOKEN.into())));
    let client = KeystoneClient::new(&server.url(), TOKEN, Duration::from_secs(5)).unwrap();
    (mock, server, client)
}

#[test]
fn all_nine_operations_round_trip() {
    let (mock, _server, client) = served();

    let user = client.users_create(&spec("alice"), Some("a@x")).unwrap();
    assert_eq!(user.mail.as_deref(), Some("a@x"));
    assert!(user.enabled);
    let project = client.projects_create("projA", "default").unwrap();
    let role = client.roles_create("member").unwrap();
    client.roles_grant(&user.id, &role.id, &project.id).unwrap();

    assert_eq!(client.users_list().unwrap(), mock.users_list().unwrap());
    assert_eq!(client.projects_list().unwrap(), vec![project.clone()]);
    assert_eq!(client.roles_list(&RoleScope::All).unwrap(), vec![role.clone()]);
    let scope = RoleScope::Assigned {
        user_id: user.id.clone(),
        project_id: project.id.clone(),
    };
    assert_eq!(client.roles_list(&scope).unwrap(), vec![role.clone()]);

    let updated = client
        .users_update(
            &user.id,
            &UserUpdate {
                mail: Some("b@x".into()),
                enabled: None,
            },
        )
        .unwrap();
    assert_eq!(updated.mail.as_deref(), Some("b@x"));
    assert_eq!(mock.user_by_id(&user.id).unwrap().mail.as_deref(), Some("b@x"));

    client.roles_revoke(&user.id, &role.id, &project.id).unwrap();
    assert!(client.roles_list(&scope).unwrap().is_empty());
    assert!(mock.state().grants.is_empty());
}

#[test]
fn conflicts_and_unknown_entities_are_typed() {
    let (_mock, _server, client) = served();
    client.users_create(&spec("alice"), None).unwrap();
    assert_eq!(
        client.users_create(&spec("alice"), None),
        Err(BackendError::Conflict {
            kind: EntityKind::User,
            name: "alice".into()
        })
    );
    client.roles_create("member").unwrap();
    assert!(matches!(
        client.roles_create("member"),
        Err(BackendError::Conflict { kind: EntityKind::Role, .. })
    ));
    assert_eq!(
        client.users_update("nobody", &UserUpdate::default()),
        Err(BackendError::UnknownEntity {
            kind: EntityKind::User,
            id: "nobody".into()
        })
    );
    assert!(matches!(
        client.roles_grant("nobody", "r", "p"),
        Err(BackendError::UnknownEntity { .. })
    ));
    assert!(matches!(
        client.users_create(&spec(""), None),
        Err(BackendError::InvalidRequest(_))
    ));
}

#[test]
fn a_wrong_token_is_refused_without_side_effects() {
    let (mock, server, _client) = served();
    let intruder = KeystoneClient::new(&server.url(), "guess", Duration::from_secs(5)).unwrap();
    assert!(matches!(
        intruder.users_create(&spec("mallory"), None),
        Err(BackendError::Unavailable(_))
    ));
    assert!(matches!(intruder.users_list(), Err(BackendError::Unavailable(_))));
    assert_eq!(mock.user_count(), 0);
}

#[test]
fn unreachable_backend_is_unavailable() {
    let client = KeystoneClient::new(
        &format!("http://{}", closed_port()),
        TOKEN,
        Duration::from_secs(2),
    )
    .unwrap();
    assert!(matches!(client.users_list(), Err(BackendError::Unavailable(_))));
}

#[test]
fn a_silent_backend_times_out() {
    // Accepts connections, never answers.
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let mut held = Vec::new();
        for conn in listener.incoming() {
            held.push(conn);
        }
    });
    let client =
        KeystoneClient::new(&format!("http://{addr}"), TOKEN, Duration::from_millis(300)).unwrap();
    let started = Instant::now();
    assert!(matches!(
        client.projects_create("p", "default"),
        Err(BackendError::Unavailable(_))
    ));
    assert!(started.elapsed() < Duration::from_secs(5));
}

#[test]
fn ids_with_reserved_characters_survive_the_path() {
    let (_mock, _server, client) = served();
    assert_eq!(
        client.users_update("a b/c?d#e", &UserUpdate::default()),
        Err(BackendError::UnknownEntity {
            kind: EntityKind::User,
            id: "a b/c?d#e".into()
        })
    );
}

#[test]
fn endpoint_path_prefix_is_kept() {
    let mock = Arc::new(MockBackend::new());
    let app = axum::Router::new().nest("/identity", mock_router(mock.clone(), None));
    let server = serve(app);
    let client =
        KeystoneClient::new(&format!("{}/identity/", server.url()), "", Duration::from_secs(5))
            .unwrap();
    client.roles_create("reader").unwrap();
    assert_eq!(mock.state().roles.len(), 1);
}

#[test]
fn provisioning_through_the_client_converges() {
    let (mock, _server, client) = served();
    let recorder = RecordingBackend::new(client);
    let ledger = GrantsLedger::in_memory();
    let desired = DesiredState {
        user: spec("alice@uni.example"),
        assignments: BTreeSet::from([
            Assignment::new("projA", "member"),
            Assignment::new("projB", "admin"),
        ]),
        mail: Some("alice@uni.example".into()),
        warnings: vec![],
    };

    let snap = user_snapshot(&recorder, "alice@uni.example", "default").unwrap();
    let plan = compute_plan(&snap, &desired, &ledger);
    execute_plan(&plan, &recorder, &ledger).into_result().unwrap();

    let state = mock.state();
    assert_eq!(state.users.len(), 1);
    assert_eq!(state.projects.len(), 2);
    assert_eq!(state.grants.len(), 2);
    let calls: BTreeSet<Operation> = recorder.calls().into_iter().collect();
    assert!(calls.contains(&Operation::UsersCreate));
    assert!(calls.contains(&Operation::RolesGrant));

    let snap = user_snapshot(&recorder, "alice@uni.example", "default").unwrap();
    assert!(compute_plan(&snap, &desired, &ledger).is_empty());

    // Withdraw one entitlement: the next run revokes it over HTTP.
    let mut fewer = desired.clone();
    fewer.assignments.remove(&Assignment::new("projB", "admin"));
    let snap = user_snapshot(&recorder, "alice@uni.example", "default").unwrap();
    let plan = compute_plan(&snap, &fewer, &ledger);
    execute_plan(&plan, &recorder, &ledger).into_result().unwrap();
    assert_eq!(mock.state().grants.len(), 1);
    assert!(recorder.calls().contains(&Operation::RolesRevoke));
}

#[derive(Debug, Clone)]
enum Op {
    ListUsers,
    ListProjects,
    ListRoles,
    Assigned(usize, usize),
    CreateUser(usize, Option<&'static str>),
    CreateProject(usize),
    CreateRole(usize),
    Grant(usize, usize, usize),
    Revoke(usize, usize, usize),
    Update(usize, Option<&'static str>, Option<bool>),
}

const NAMES: [&str; 4] = ["alice", "bob", "", "c d"];

fn op() -> impl Strategy<Value = Op> {
    let i = 0usize..4;
    let mail = prop_oneof![Just(None), Just(Some("m@x")), Just(Some("n@x"))];
    prop_oneof![
        Just(Op::ListUsers),
        Just(Op::ListProjects),
        Just(Op::ListRoles),
        (i.clone(), i.clone()).prop_map(|(u, p)| Op::Assigned(u, p)),
        (i.clone(), mail.clone()).prop_map(|(n, m)| Op::CreateUser(n, m)),
        i.clone().prop_map(Op::CreateProject),
        i.clone().prop_map(Op::CreateRole),
        (i.clone(), i.clone(), i.clone()).prop_map(|(u, r, p)| Op::Grant(u, r, p)),
        (i.clone(), i.clone(), i.clone()).prop_map(|(u, r, p)| Op::Revoke(u, r, p)),
        (i, mail, any::<Option<bool>>()).prop_map(|(u, m, e)| Op::Update(u, m, e)),
    ]
}

/// Ids the mock hands out, plus ones it never will.
fn id(kind: &str, i: usize) -> String {
    if i == 3 {
        format!("missing {kind}/x")
    } else {
        format!("{kind}-{:06}", i + 1)
    }
}

fn apply(b: &dyn IdentityBackend, op: &Op) -> String {
    match op {
        Op::ListUsers => format!("{:?}", b.users_list()),
        Op::ListProjects => format!("{:?}", b.projects_list()),
        Op::ListRoles => format!("{:?}", b.roles_list(&RoleScope::All)),
        Op::Assigned(u, p) => format!(
            "{:?}",
            b.roles_list(&RoleScope::Assigned {
                user_id: id("user", *u),
                project_id: id("project", *p),
            })
        ),
        Op::CreateUser(n, m) => format!("{:?}", b.users_create(&spec(NAMES[*n]), *m)),
        Op::CreateProject(n) => format!("{:?}", b.projects_create(NAMES[*n], "default")),
        Op::CreateRole(n) => format!("{:?}", b.roles_create(NAMES[*n])),
        Op::Grant(u, r, p) => format!(
            "{:?}",
            b.roles_grant(&id("user", *u), &id("role", *r), &id("project", *p))
        ),
        Op::Revoke(u, r, p) => format!(
            "{:?}",
            b.roles_revoke(&id("user", *u), &id("role", *r), &id("project", *p))
        ),
        Op::Update(u, m, e) => format!(
            "{:?}",
            b.users_update(
                &id("user", *u),
                &UserUpdate {
                    mail: m.map(str::to_owned),
                    enabled: *e,
                }
            )
        ),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// The client over the served mock is indistinguishable from the mock
    /// itself: same results, same errors, same final state.
    #[test]
    fn the_client_is_a_transparent_proxy(ops in proptest::collection::vec(op(), 1..30)) {
        let direct = MockBackend::new();
        let (remote, _server, client) = served();
        for op in &ops {
            prop_assert_eq!(apply(&direct, op), apply(&client, op), "{:?}", op);
        }
        prop_assert_eq!(direct.state(), remote.state());
    }
}

use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use fedprov_core::backend::{BackendError, IdentityBackend, RoleScope};
use fedprov_core::LocalUserSpec;
use fedprov_http::KeystoneClient;
use serde_json::{json, Value};
use tempfile::TempDir;

fn samples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("samples")
}

fn fedprov() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedprov"));
    cmd.env_remove("FEDPROV_CONFIG").env("RUST_LOG", "warn");
    cmd
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output {
        status,
        stdout,
        stderr,
    } = cmd.output().unwrap();
    (
        status.code().unwrap_or(-1),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

/// Copies the sample config into a scratch directory, with overrides.
fn config(overrides: Value) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(samples().join("mapping.json"), dir.path().join("mapping.json")).unwrap();
    let text = std::fs::read_to_string(samples().join("service.json")).unwrap();
    let mut doc: Value = serde_json::from_str(&text).unwrap();
    for (k, v) in overrides.as_object().unwrap() {
        doc[k] = v.clone();
    }
    let path = dir.path().join("service.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    (dir, path)
}

fn free_port() -> SocketAddr {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
}

struct Daemon(Child);

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn(cmd: &mut Command, addr: SocketAddr) -> Daemon {
    let child = cmd.stdout(Stdio::null()).stderr(Stdio::null()).spawn().unwrap();
    let daemon = Daemon(child);
    let deadline = Instant::now() + Duration::from_secs(10);
    while TcpStream::connect(addr).is_err() {
        assert!(Instant::now() < deadline, "nothing listening on {addr}");
        std::thread::sleep(Duration::from_millis(20));
    }
    daemon
}

#[test]
fn sample_config_validates() {
    let (code, out, _) = run(fedprov().arg("validate-config").arg(samples().join("service.json")));
    assert_eq!(code, 0);
    assert!(out.starts_with("config ok"));
    assert!(out.contains("backend: memory"));
    let (code, out, _) = run(fedprov()
        .arg("validate-config")
        .arg(samples().join("service-keystone.json")));
    assert_eq!(code, 0);
    assert!(out.contains("backend: http http://127.0.0.1:5000"));
}

#[test]
fn bad_configs_are_reported() {
    let (_dir, path) = config(json!({"hook_path": "/"}));
    let (code, _, err) = run(fedprov().arg("validate-config").arg(&path));
    assert_ne!(code, 0);
    assert!(err.contains("hook_path"), "{err}");

    let (_dir, path) = config(json!({"mapping_rules_path": "missing.json"}));
    let (code, _, err) = run(fedprov().arg("validate-config").arg(&path));
    assert_ne!(code, 0);
    assert!(err.contains("missing.json"), "{err}");

    let (_dir, path) = config(json!({"surprise": true}));
    let (code, _, err) = run(fedprov().arg("validate-config").arg(&path));
    assert_ne!(code, 0);
    assert!(err.contains("surprise"), "{err}");
}

#[test]
fn config_path_falls_back_to_the_environment() {
    let (code, out, _) = run(fedprov()
        .arg("validate-config")
        .env("FEDPROV_CONFIG", samples().join("service.json")));
    assert_eq!(code, 0, "{out}");
    let (code, out, _) = run(fedprov()
        .args(["plan", "--attrs"])
        .arg(samples().join("alice.json"))
        .env("FEDPROV_CONFIG", samples().join("service.json")));
    assert_eq!(code, 0);
    assert!(out.contains("plan: 4 step(s)"));
    let (code, _, _) = run(fedprov().arg("validate-config"));
    assert_ne!(code, 0);
}

#[test]
fn plan_prints_a_dry_run_and_mutates_nothing() {
    let (dir, path) = config(json!({}));
    let (code, out, _) = run(fedprov()
        .args(["plan", "--config"])
        .arg(&path)
        .arg("--attrs")
        .arg(samples().join("alice.json")));
    assert_eq!(code, 0);
    assert!(out.contains("plan: 4 step(s)"), "{out}");
    assert!(out.contains("CreateUser alice@uni.example"));
    assert!(out.contains("Grant alice@uni.example member on projA"));
    assert!(!dir.path().join("grants.jsonl").exists());

    let (code, out, _) = run(fedprov()
        .args(["plan", "--json", "--config"])
        .arg(&path)
        .arg("--attrs")
        .arg(samples().join("alice.json")));
    assert_eq!(code, 0);
    let doc: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["desired"]["user"]["name"], "alice@uni.example");
    assert_eq!(doc["plan"]["steps"].as_array().unwrap().len(), 4);

    let (code, out, _) = run(fedprov()
        .args(["plan", "--config"])
        .arg(&path)
        .arg("--attrs")
        .arg(samples().join("nobody.json")));
    assert_eq!(code, 0);
    assert!(out.contains("denied: no_entitlement"));
}

#[test]
fn malformed_attribute_files_fail() {
    let dir = tempfile::tempdir().unwrap();
    for (i, text) in ["not json", "[1, 2]", r#"{"eppn": 3}"#, r#"{"entitlement": [1]}"#]
        .iter()
        .enumerate()
    {
        let attrs = dir.path().join(format!("attrs{i}.json"));
        std::fs::write(&attrs, text).unwrap();
        let (code, _, err) = run(fedprov()
            .args(["plan", "--config"])
            .arg(samples().join("service.json"))
            .arg("--attrs")
            .arg(&attrs));
        assert_ne!(code, 0, "{text}");
        assert!(err.contains("invalid attribute file"), "{err}");
    }
    let (code, _, err) = run(fedprov()
        .args(["plan", "--config"])
        .arg(samples().join("service.json"))
        .args(["--attrs", "/nonexistent/attrs.json"]));
    assert_ne!(code, 0);
    assert!(err.contains("/nonexistent/attrs.json"));
}

#[test]
fn plan_against_a_served_mock_backend() {
    let addr = free_port();
    let _mock = spawn(
        fedprov().args(["mock-backend", "--listen", &addr.to_string(), "--token", "tok"]),
        addr,
    );
    let endpoint = format!("http://{addr}");
    let (dir, path) = config(json!({
        "backend": {"kind": "http", "endpoint": endpoint, "token": "tok", "timeout_secs": 5}
    }));
    let plan = || {
        run(fedprov()
            .args(["plan", "--config"])
            .arg(&path)
            .arg("--attrs")
            .arg(samples().join("alice.json")))
    };
    let (code, out, _) = plan();
    assert_eq!(code, 0);
    assert!(out.contains("plan: 4 step(s)"), "{out}");

    // Provision alice directly, then the plan is a fixed point.
    let client = KeystoneClient::new(&endpoint, "tok", Duration::from_secs(5)).unwrap();
    let user = client
        .users_create(
            &LocalUserSpec {
                name: "alice@uni.example".into(),
                domain_id: "default".into(),
                user_type: "local".into(),
            },
            Some("alice@uni.example"),
        )
        .unwrap();
    let project = client.projects_create("projA", "default").unwrap();
    let role = client.roles_create("member").unwrap();
    client.roles_grant(&user.id, &role.id, &project.id).unwrap();
    let (code, out, _) = plan();
    assert_eq!(code, 0);
    assert!(out.contains("plan: empty"), "{out}");
    assert!(!dir.path().join("grants.jsonl").exists());

    let scope = RoleScope::Assigned {
        user_id: user.id,
        project_id: project.id,
    };
    assert_eq!(client.roles_list(&scope).unwrap().len(), 1);
    let stranger = KeystoneClient::new(&endpoint, "nope", Duration::from_secs(5)).unwrap();
    assert!(matches!(stranger.users_list(), Err(BackendError::Unavailable(_))));
}

#[test]
fn serve_runs_the_hook() {
    let addr = free_port();
    let (dir, path) = config(json!({"listen": addr.to_string(), "consent_enabled": false}));
    let _server = spawn(fedprov().args(["serve", "--config"]).arg(&path), addr);
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .max_redirects(0)
        .build()
        .into();
    let ret = "https://keystone.example/Shibboleth.sso/SessionHookReturn";
    let resp = agent
        .get(format!("http://{addr}/regsite"))
        .query("return", ret)
        .header("X-Fed-Attr-eppn", "alice@uni.example")
        .header(
            "X-Fed-Attr-entitlement",
            "urn:mace:federation.example:cloud:projA:member",
        )
        .call()
        .unwrap();
    assert_eq!(resp.status(), 302);
    assert_eq!(resp.headers()["location"], ret);
    let ledger = std::fs::read_to_string(dir.path().join("grants.jsonl")).unwrap();
    let entry: Value = serde_json::from_str(ledger.lines().next().unwrap()).unwrap();
    assert_eq!(entry["user"], "alice@uni.example");
    assert_eq!(entry["project"], "projA");
    assert_eq!(entry["role"], "member");
    assert_eq!(entry["action"], "granted");
    assert!(entry["ts"].is_string());

    let resp = agent.get(format!("http://{addr}/regsite")).call().unwrap();
    assert_eq!(resp.status(), 400);
}

#[test]
fn every_sample_scenario_passes() {
    for entry in std::fs::read_dir(samples().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let (code, _, err) = run(fedprov().args(["simulate", "--scenario"]).arg(&path));
        assert_eq!(code, 0, "{}: {err}", path.display());
        assert!(err.trim_end().ends_with("ok"), "{err}");
    }
}

#[test]
fn simulate_emits_a_deterministic_trace() {
    let scenario = samples().join("scenarios/happy_path.json");
    let trace = |seed: &str| {
        let (code, out, _) = run(fedprov()
            .args(["simulate", "--emit-trace", "--seed", seed, "--scenario"])
            .arg(&scenario));
        assert_eq!(code, 0);
        out
    };
    let a = trace("7");
    assert_eq!(a, trace("7"));
    let doc: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(doc["outcome"], "token_issued");
    assert_eq!(doc["aa_latency_ms"], 30);
    assert_eq!(
        doc["total_login_latency_ms"].as_u64().unwrap(),
        doc["base_latency_ms"].as_u64().unwrap() + 30
    );
    let events = doc["events"].as_array().unwrap();
    assert_eq!(events.last().unwrap()["action"]["type"], "landed");

    let (_, quiet, _) = run(fedprov().args(["simulate", "--scenario"]).arg(&scenario));
    assert!(quiet.is_empty());
}

#[test]
fn simulate_fails_on_a_wrong_expectation() {
    let text = std::fs::read_to_string(samples().join("scenarios/happy_path.json")).unwrap();
    let mut doc: Value = serde_json::from_str(&text).unwrap();
    doc["expected_outcome"] = json!("consent_abandoned");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wrong.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    let (code, _, err) = run(fedprov().args(["simulate", "--scenario"]).arg(&path));
    assert_eq!(code, 1);
    assert!(err.contains("violation: outcome"), "{err}");

    std::fs::write(&path, r#"{"entities": {}}"#).unwrap();
    let (code, _, err) = run(fedprov().args(["simulate", "--scenario"]).arg(&path));
    assert_eq!(code, 2);
    assert!(err.contains("invalid scenario"), "{err}");
}

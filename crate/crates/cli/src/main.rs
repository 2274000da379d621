use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedprov_core::harness::{assert_trace, Expectations, Harness, Scenario};
use fedprov_core::hook::{dry_run_plan, parse_attribute_file, CONFIG_ENV};
use fedprov_core::{GrantsLedger, MockBackend, ServiceConfig};
use fedprov_http::{build_backend, build_service, serve_hook, serve_mock};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "fedprov", version, about = "Provision federated users into an OpenStack-style identity backend")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the session hook service.
    Serve {
        #[arg(long, env = CONFIG_ENV)]
        config: PathBuf,
    },
    /// Print the plan a login with the given attributes would execute.
    Plan {
        #[arg(long, env = CONFIG_ENV)]
        config: PathBuf,
        /// JSON object of attribute name to string or list of strings.
        #[arg(long)]
        attrs: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check a service config file and its mapping rules.
    ValidateConfig {
        #[arg(env = CONFIG_ENV)]
        config: PathBuf,
    },
    /// Run a simulated login scenario and check the trace.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the trace as JSON on stdout.
        #[arg(long)]
        emit_trace: bool,
    },
    /// Serve the in-memory Keystone v3 subset over HTTP.
    MockBackend {
        #[arg(long, default_value = "127.0.0.1:5000")]
        listen: String,
        /// Bearer token clients must present. Unauthenticated if omitted.
        #[arg(long)]
        token: Option<String>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Serve { config } => serve(&config),
        Command::Plan { config, attrs, json } => plan(&config, &attrs, json),
        Command::ValidateConfig { config } => validate(&config),
        Command::Simulate {
            scenario,
            seed,
            emit_trace,
        } => simulate(&scenario, seed, emit_trace),
        Command::MockBackend { listen, token } => mock_backend(&listen, token),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

fn serve(path: &Path) -> Result<ExitCode> {
    let config = ServiceConfig::load(path)?;
    let service = Arc::new(build_service(&config)?);
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .with_context(|| format!("binding {}", config.listen))?;
        tracing::info!(
            addr = %listener.local_addr()?,
            hook = %config.hook_path,
            "session hook listening"
        );
        serve_hook(listener, service).await?;
        Ok(ExitCode::SUCCESS)
    })
}

fn plan(config_path: &Path, attrs: &Path, json: bool) -> Result<ExitCode> {
    let config = ServiceConfig::load(config_path)?;
    let text = std::fs::read_to_string(attrs)
        .with_context(|| format!("reading {}", attrs.display()))?;
    let attributes =
        parse_attribute_file(&text).with_context(|| format!("in {}", attrs.display()))?;
    let settings = config.settings()?;
    let backend = build_backend(&config.backend)?;
    // Read the ledger without creating it: a dry run leaves no trace.
    let ledger = if config.ledger_path.exists() {
        GrantsLedger::open(&config.ledger_path)?
    } else {
        GrantsLedger::in_memory()
    };
    let dry = dry_run_plan(&attributes, &settings, backend.as_ref(), &ledger)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&dry)?);
        return Ok(ExitCode::SUCCESS);
    }
    let user = &dry.desired.user;
    println!("user: {} (domain {})", user.name, user.domain_id);
    for w in &dry.desired.warnings {
        println!("warning: {w}");
    }
    match &dry.denied {
        Some(reason) => println!("denied: {reason}; nothing would be provisioned"),
        None => print!("{}", dry.plan),
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(path: &Path) -> Result<ExitCode> {
    let config = ServiceConfig::load(path)?;
    let rules = config.mapping_rules()?;
    let backend = match &config.backend {
        fedprov_core::hook::BackendConfig::Memory => "memory".to_owned(),
        fedprov_core::hook::BackendConfig::Http { endpoint, .. } => format!("http {endpoint}"),
    };
    println!("config ok: {}", path.display());
    println!("  listen: {}  hook: {}", config.listen, config.hook_path);
    println!("  mapping rules: {}", rules.rules.len());
    println!("  backend: {backend}");
    println!(
        "  consent: {}  require entitlement: {}",
        on_off(config.consent_enabled),
        on_off(config.require_entitlement)
    );
    Ok(ExitCode::SUCCESS)
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn simulate(path: &Path, seed: u64, emit_trace: bool) -> Result<ExitCode> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let scenario = Scenario::from_json(&text)?;
    let mut harness = Harness::new(scenario.clone(), seed)?;
    let trace = harness.run();
    if emit_trace {
        println!("{}", serde_json::to_string_pretty(&trace)?);
    }
    let name = if scenario.name.is_empty() {
        path.display().to_string()
    } else {
        scenario.name.clone()
    };
    eprintln!(
        "{name}: outcome {} (expected {}), login latency {} ms ({} ms attribute queries)",
        trace.outcome,
        scenario.expected_outcome,
        trace.total_login_latency_ms,
        trace.aa_latency_ms
    );
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    match assert_trace(&trace, &Expectations::for_scenario(&scenario)) {
        Ok(()) => {
            eprintln!("ok");
            Ok(ExitCode::SUCCESS)
        }
        Err(violations) => {
            for v in &violations {
                eprintln!("violation: {v}");
            }
            Ok(ExitCode::FAILURE)
        }
    }
}

fn mock_backend(listen: &str, token: Option<String>) -> Result<ExitCode> {
    if token.as_deref() == Some("") {
        bail!("--token must not be empty");
    }
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        tracing::info!(addr = %listener.local_addr()?, "mock keystone listening");
        serve_mock(listener, Arc::new(MockBackend::new()), token).await?;
        Ok(ExitCode::SUCCESS)
    })
}

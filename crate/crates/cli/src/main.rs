//! `trainforge`: validate scenarios, replay traces, simulate trainees,
//! build cohort reports and run the HTTP service.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage or I/O error.

use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use trainforge_core::engine::replay;
use trainforge_core::model::{ModuleKind, Scenario};
use trainforge_core::parser::{parse_scenario_bytes, ParseDiagnostic, Severity};
use trainforge_core::report::{build_report, render_text, SessionFilter};
use trainforge_core::simulator::{parse_profiles, simulate_cohort, store_bundles};
use trainforge_core::store::{parse_event_records, MetricsStore};
use trainforge_service::{serve, AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "trainforge", version, about = "Adaptive training-scenario toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and print located diagnostics.
    Validate { file: PathBuf },
    /// Re-run a recorded event log and print its metrics as canonical JSON.
    Replay {
        scenario: PathBuf,
        trace: PathBuf,
        /// Seed the log was recorded with; defaults to the one in its first event.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate synthetic sessions into a store directory.
    Simulate {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Sessions per profile.
        #[arg(short = 'n', value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a cohort report from a store.
    Report {
        #[arg(long, env = "TRAINFORGE_STORE")]
        store: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        version: Option<u32>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run the HTTP service until interrupted.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long = "store-dir", alias = "store", env = "TRAINFORGE_STORE")]
        store_dir: PathBuf,
        /// Directory of static files served at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Do not time out prompts server-side.
        #[arg(long)]
        no_timeouts: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Machine,
}

enum Failure {
    Domain(String),
    Usage(String),
}

type CmdResult = Result<(), Failure>;

fn domain(msg: impl Into<String>) -> Failure {
    Failure::Domain(msg.into())
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn render_diagnostic(file: &Path, d: &ParseDiagnostic) -> String {
    let severity = match d.severity {
        Severity::Error => "error",
        Severity::Warning => "warning",
    };
    let pos = match (d.location.line, d.location.column) {
        (Some(l), Some(c)) => format!("{}:{l}:{c}", file.display()),
        _ => file.display().to_string(),
    };
    let at = if d.location.path.is_empty() { String::new() } else { format!(" (at {})", d.location.path) };
    format!("{pos}: {severity}[{}]: {}{at}", d.code, d.message)
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let report = parse_scenario_bytes(&read(path)?);
    for d in &report.diagnostics {
        eprintln!("{}", render_diagnostic(path, d));
    }
    report.scenario.ok_or_else(|| domain(format!("{} is not a valid scenario", path.display())))
}

fn validate(file: &Path) -> CmdResult {
    let s = load_scenario(file)?;
    println!("{} v{}: {} module(s), {} step(s)", s.id(), s.version(), s.modules().len(), s.total_steps());
    Ok(())
}

fn replay_cmd(scenario: &Path, trace: &Path, seed: Option<u64>) -> CmdResult {
    let scenario = Arc::new(load_scenario(scenario)?);
    let bytes = read(trace)?;
    let events: Vec<_> =
        parse_event_records(&bytes, trace).map_err(|e| domain(e.to_string()))?.into_iter().map(|(_, e)| e).collect();
    let seed = match seed {
        Some(s) => s,
        None => match events.first().map(|e| &e.kind) {
            Some(trainforge_core::EventKind::SessionStarted(start)) => start.seed,
            _ => return Err(domain(format!("{}: seq 0: trace does not begin with SessionStarted", trace.display()))),
        },
    };
    let metrics = replay(scenario, &events, seed)
        .map_err(|e| domain(format!("{}: seq {}: {} [{}]", trace.display(), e.seq, e.source, e.code())))?;
    print!("{}", metrics.to_canonical_json());
    Ok(())
}

fn simulate_cmd(profile: &Path, scenario: &Path, n: u64, seed: u64, out: &Path) -> CmdResult {
    let text = String::from_utf8(read(profile)?).map_err(|_| domain("profile file is not UTF-8"))?;
    let profiles = parse_profiles(&text).map_err(|e| domain(e.to_string()))?;
    let scenario = Arc::new(load_scenario(scenario)?);
    let bundles = simulate_cohort(&profiles, scenario.clone(), n as usize, seed).map_err(|e| domain(e.to_string()))?;
    let store = MetricsStore::open(out).map_err(|e| Failure::Usage(e.to_string()))?;
    store_bundles(&store, &scenario, &bundles).map_err(|e| domain(e.to_string()))?;
    let per_profile = n as usize;
    let sessions: Vec<_> = bundles
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let live = b.metrics.as_ref().and_then(|m| m.subtask(ModuleKind::Live));
            json!({
                "profile": profiles[i / per_profile].name,
                "session_id": b.session_id,
                "seed": b.seed,
                "vrtss": live.and_then(|l| l.vrtss),
            })
        })
        .collect();
    let summary = json!({
        "scenario_id": scenario.id(),
        "scenario_version": scenario.version(),
        "store": out,
        "sessions": sessions,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    eprintln!("wrote {} session(s) to {}", bundles.len(), out.display());
    Ok(())
}

fn report_cmd(store: &Path, scenario: Option<String>, version: Option<u32>, format: Format) -> CmdResult {
    if !store.is_dir() {
        return Err(Failure::Usage(format!("store directory {} does not exist", store.display())));
    }
    let store = MetricsStore::open(store).map_err(|e| Failure::Usage(e.to_string()))?;
    let filter = SessionFilter { scenario_id: scenario, scenario_version: version };
    let report = build_report(&store, &filter).map_err(|e| domain(format!("{} [{}]", e, e.code())))?;
    for id in &report.mismatches {
        eprintln!("warning: stored metrics for session {id} differ from the recomputation");
    }
    match format {
        Format::Text => print!("{}", render_text(&report)),
        Format::Machine => print!("{}", report.to_json()),
    }
    Ok(())
}

fn serve_cmd(port: u16, bind: IpAddr, store_dir: PathBuf, ui_dir: Option<PathBuf>, no_timeouts: bool) -> CmdResult {
    let store = MetricsStore::open(&store_dir).map_err(|e| Failure::Usage(e.to_string()))?;
    let config = ServiceConfig { enforce_timeouts: !no_timeouts, ui_dir, ..ServiceConfig::default() };
    let app = AppState::new(Arc::new(store), config);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Usage(e.to_string()))?;
    runtime.block_on(async move {
        let addr = SocketAddr::new(bind, port);
        let listener =
            tokio::net::TcpListener::bind(addr).await.map_err(|e| domain(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| domain(e.to_string()))?;
        eprintln!("listening on http://{local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            eprintln!("shutting down");
        };
        serve(listener, app, shutdown).await.map_err(|e| domain(e.to_string()))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { file } => validate(&file),
        Command::Replay { scenario, trace, seed } => replay_cmd(&scenario, &trace, seed),
        Command::Simulate { profile, scenario, n, seed, out } => simulate_cmd(&profile, &scenario, n, seed, &out),
        Command::Report { store, scenario, version, format } => report_cmd(&store, scenario, version, format),
        Command::Serve { port, bind, store_dir, ui_dir, no_timeouts } => {
            serve_cmd(port, bind, store_dir, ui_dir, no_timeouts)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

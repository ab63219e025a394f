use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Command as Process, ExitCode, Stdio};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use treeval::api::{self, AppState, ServiceConfig};
use treeval::failure_location::{extract_triggers, locate, LocateError, Probe};
use treeval::generation::FaultSpec;
use treeval::gateway::MockFixtures;
use treeval::render::render_text;
use treeval::session::{write_analysis, Services, Session};
use treeval::simulation::{compare, run_scenario, SimMode, SimScenario};
use treeval::{parse_scene_graph, SceneGraph, Verdict};

#[derive(Parser)]
#[command(name = "treeval", version, about = "Adaptive test trees for text-to-image models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory where sessions are saved and loaded from.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Shared bearer token required on every request.
        #[arg(long, env = "TREEVAL_TOKEN")]
        token: Option<String>,
    },
    /// Run a seeded scenario against the simulated model and write the bug curve.
    Simulate {
        #[arg(long)]
        root_topic: Option<String>,
        /// Fault spec JSON; the bundled one when omitted.
        #[arg(long)]
        fault_spec: Option<PathBuf>,
        /// Mock gateway fixture JSON; the bundled table when omitted.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, value_enum, default_value_t = Mode::Adaptive)]
        mode: Mode,
        #[arg(long)]
        seed: Option<u64>,
        /// Probability that the simulated evaluator flips a verdict.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Curve CSV destination; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the session file.
        #[arg(long)]
        session_out: Option<PathBuf>,
        /// Run both modes and print the comparison.
        #[arg(long)]
        compare: bool,
    },
    /// Find the failure triggers of a scene graph with a shell oracle.
    ///
    /// The oracle gets `{"graph": ..., "text": ...}` on stdin and exits 0
    /// for pass, anything else for fail.
    Locate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        oracle: String,
        #[arg(long, default_value_t = treeval::failure_location::DEFAULT_PROBE_BUDGET)]
        budget: usize,
    },
    /// Write the analysis CSVs of a saved session.
    Export {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild a saved session from its command log and check it matches.
    Replay {
        #[arg(long)]
        session: PathBuf,
        /// Write the rebuilt session here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Adaptive,
    Static,
}

struct CliError {
    code: &'static str,
    message: String,
}

impl CliError {
    fn new(code: &'static str, message: impl ToString) -> Self {
        CliError {
            code,
            message: message.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Serve {
            port,
            host,
            data_dir,
            token,
        } => serve(&host, port, data_dir, token),
        Cmd::Simulate {
            root_topic,
            fault_spec,
            fixtures,
            budget,
            mode,
            seed,
            noise,
            out,
            session_out,
            compare,
        } => {
            let mode = match mode {
                Mode::Adaptive => SimMode::Adaptive,
                Mode::Static => SimMode::Static,
            };
            build_scenario(root_topic, fault_spec, fixtures, budget, mode, seed, noise)
                .and_then(|sc| simulate(sc, out.as_deref(), session_out.as_deref(), compare))
        }
        Cmd::Locate { graph, oracle, budget } => locate_cmd(&graph, &oracle, budget),
        Cmd::Export { session, out } => export(&session, &out),
        Cmd::Replay { session, out } => replay(&session, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": {"code": e.code, "message": e.message}}));
            ExitCode::FAILURE
        }
    }
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json serializes"));
}

fn serve(host: &str, port: u16, data_dir: Option<PathBuf>, token: Option<String>) -> Result<(), CliError> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::new("bad_address", format!("{host}:{port}: {e}")))?;
    let state = AppState::open(ServiceConfig { data_dir, token }).map_err(|e| CliError::new("storage", e))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new("runtime", e))?;
    runtime
        .block_on(api::serve(addr, state))
        .map_err(|e| CliError::new("serve", format!("{addr}: {e}")))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn build_scenario(
    root_topic: Option<String>,
    fault_spec: Option<PathBuf>,
    fixtures: Option<PathBuf>,
    budget: Option<usize>,
    mode: SimMode,
    seed: Option<u64>,
    noise: f64,
) -> Result<SimScenario, CliError> {
    let mut sc = SimScenario::bundled(mode);
    if let Some(t) = root_topic {
        sc.root_topic = t;
    }
    if let Some(p) = fault_spec {
        sc.fault_spec = FaultSpec::from_json(&read_file(&p)?).map_err(|e| CliError::new("fault_spec", e))?;
    }
    if let Some(p) = fixtures {
        MockFixtures::from_file(&p).map_err(|e| CliError::new("fixtures", e))?;
        sc.config.gateway.fixtures = Some(p);
    }
    if let Some(b) = budget {
        sc.budget = b;
    }
    if let Some(s) = seed {
        sc.seed = s;
    }
    sc.evaluator_noise = noise;
    Ok(sc)
}

fn simulate(sc: SimScenario, out: Option<&Path>, session_out: Option<&Path>, both: bool) -> Result<(), CliError> {
    let run = |sc: &SimScenario| run_scenario(sc).map_err(|e| CliError::new("simulation", e));
    let result = run(&sc)?;
    if let Some(p) = session_out {
        write_file(p, &result.session_json)?;
    }
    let Some(out) = out else {
        print!("{}", result.curve_csv);
        return Ok(());
    };
    write_file(out, &result.curve_csv)?;
    let mut summary = json!({
        "mode": result.mode,
        "seed": sc.seed,
        "budget": sc.budget,
        "bugs": result.bugs,
        "apr": result.apr,
        "afr": result.afr,
        "main_prompts": result.main_prompts,
        "probe_prompts": result.probe_prompts,
        "curve": out.display().to_string(),
    });
    if both {
        let mut other = sc.clone();
        other.mode = match sc.mode {
            SimMode::Adaptive => SimMode::Static,
            SimMode::Static => SimMode::Adaptive,
        };
        let other_result = run(&other)?;
        let c = match sc.mode {
            SimMode::Adaptive => compare(&result, &other_result),
            SimMode::Static => compare(&other_result, &result),
        };
        summary["comparison"] = serde_json::to_value(&c).expect("comparison serializes");
    }
    print_json(&summary);
    Ok(())
}

/// Runs the oracle command on one graph: exit 0 is a pass.
fn ask_oracle(cmd: &str, graph: &SceneGraph) -> Result<Probe, CliError> {
    let text = render_text(graph).unwrap_or_default();
    let input = json!({"graph": serde_json::from_str::<Value>(&graph.canonical_json()).expect("canonical json"), "text": text});
    let mut child = Process::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .map_err(|e| CliError::new("oracle", e))?;
    if let Some(mut stdin) = child.stdin.take() {
        // an oracle that ignores stdin may close it early
        let _ = stdin.write_all(input.to_string().as_bytes());
    }
    let status = child.wait().map_err(|e| CliError::new("oracle", e))?;
    Ok(Probe {
        verdict: Verdict::from_pass(status.success()),
        text,
    })
}

fn locate_cmd(graph_path: &Path, oracle: &str, budget: usize) -> Result<(), CliError> {
    let root = parse_scene_graph(&read_file(graph_path)?).map_err(|e| CliError::new("scene_graph", e))?;
    let first = ask_oracle(oracle, &root)?;
    if first.verdict.is_pass() {
        return Err(CliError::new("root_passes", "the oracle passes the whole graph; nothing to locate"));
    }
    let trace = locate(&root, first.text.clone(), budget, |g| ask_oracle(oracle, g)).map_err(|e| match e {
        LocateError::InvalidRoot => CliError::new("scene_graph", "graph is empty"),
        LocateError::Probe(e) => e,
    })?;
    let triggers = extract_triggers(&trace);
    print_json(&json!({
        "root_text": first.text,
        "triggers": triggers,
        "probe_count": trace.probe_count,
        "budget": trace.budget,
        "truncated": trace.truncated,
        "trace": trace,
    }));
    Ok(())
}

fn load_session(path: &Path) -> Result<Session, CliError> {
    Session::load(path).map_err(|e| CliError::new("session", e))
}

fn export(session: &Path, out: &Path) -> Result<(), CliError> {
    let s = load_session(session)?;
    let files = write_analysis(&s.tree, out).map_err(|e| CliError::new("io", e))?;
    let names: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    print_json(&json!({"files": names}));
    Ok(())
}

fn replay(session: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let saved = load_session(session)?;
    let services = Services::from_config(saved.config()).map_err(|e| CliError::new("session", e))?;
    let rebuilt = Session::replay(&saved.tree.root_topic, saved.config().clone(), services, &saved.log)
        .map_err(|e| CliError::new("replay", e))?;
    if let Some(p) = out {
        rebuilt.save(p).map_err(|e| CliError::new("io", e))?;
    }
    if rebuilt.tree != saved.tree {
        return Err(CliError::new("replay_mismatch", "replayed tree differs from the saved tree"));
    }
    print_json(&json!({"identical": true, "commands": saved.log.len(), "nodes": rebuilt.tree.nodes.len()}));
    Ok(())
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use capsim::decision::AggregationMode;
use capsim::domain::{HealthLevel, Housing, PersonalState, Registration};
use capsim::dynamics::{run_with, RunOptions};
use capsim::evaluation::{compare, compute_metrics, DeltaReport, EquityMetrics};
use capsim::population::sample_population;
use capsim::scenario::{load_scenario, ScenarioError, ScenarioSpec};
use capsim::{bundled, report, AgentProfile};
use capsim_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "capsim", version, about = "Capability-deprivation simulations driven by scenario files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Structured,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Lexicographic,
    Weighted,
    NeedConstrained,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and list every violation.
    Validate {
        scenario: String,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Draw a synthetic population and write it as CSV.
    Sample {
        scenario: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `<output dir>/population.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "CAPSIM_OUT_DIR", default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run a simulation and write the run report, metrics, trajectories and series.
    Run {
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "CAPSIM_OUT_DIR", default_value = "out")]
        out_dir: PathBuf,
        /// Norm id to switch off for this run (repeatable).
        #[arg(long = "disable-norm", value_name = "ID")]
        disable: Vec<String>,
        /// Norm id to switch on for this run (repeatable).
        #[arg(long = "enable-norm", value_name = "ID")]
        enable: Vec<String>,
        #[arg(long)]
        horizon: Option<u32>,
        #[arg(long, value_enum)]
        aggregation: Option<Mode>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        weight: Option<f64>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Difference of two metrics files (second minus first).
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Write the delta report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "structured")]
        format: Format,
    },
    /// Dump the compiled MDP of one agent state.
    Inspect {
        scenario: String,
        #[arg(long, default_value = "1")]
        health: String,
        #[arg(long, default_value = "roofless")]
        housing: String,
        #[arg(long, default_value = "registered")]
        registration: String,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[arg(long)]
        persist_dir: Option<PathBuf>,
    },
}

enum Failure {
    /// Bad scenario or bad request; exit 1.
    Invalid(String),
    /// Anything that went wrong while doing valid work; exit 2.
    Runtime(String),
}

type CliResult<T = ()> = Result<T, Failure>;

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

/// A file path, the same path with `.toml` appended, or a bundled name.
fn read_scenario(arg: &str) -> CliResult<(String, Vec<u8>)> {
    let path = Path::new(arg);
    let with_ext = PathBuf::from(format!("{arg}.toml"));
    for p in [path, with_ext.as_path()] {
        if p.is_file() {
            return fs::read(p).map(|b| (p.display().to_string(), b)).map_err(|e| runtime(format!("{}: {e}", p.display())));
        }
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(arg);
    match bundled::source(stem) {
        Some(src) => Ok((format!("bundled:{stem}"), src.as_bytes().to_vec())),
        None => Err(Failure::Runtime(format!("scenario `{arg}` not found"))),
    }
}

fn describe(e: &ScenarioError, origin: &str) -> String {
    match e {
        ScenarioError::Parse { line, column, message } => format!("{origin}:{line}:{column}: {message}"),
        ScenarioError::Validation(vs) => {
            let mut out = format!("{origin}: {} violation(s)", vs.len());
            for v in vs {
                let _ = write!(out, "\n  {}: {}", v.path, v.message);
            }
            out
        }
    }
}

fn load(arg: &str) -> CliResult<ScenarioSpec> {
    let (origin, bytes) = read_scenario(arg)?;
    load_scenario(&bytes).map_err(|e| Failure::Invalid(describe(&e, &origin)))
}

fn write_file(path: &Path, body: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn validate(scenario: &str, format: Format) -> CliResult {
    let (origin, bytes) = read_scenario(scenario)?;
    match (load_scenario(&bytes), format) {
        (Ok(spec), Format::Text) => {
            println!("{origin}: ok ({} actions, {} norms, {} resources)", spec.actions.len(), spec.norms.len(), spec.resources.len());
            Ok(())
        }
        (Ok(_), Format::Structured) => {
            print!("{}", report::to_json(&serde_json::json!({ "scenario": origin, "valid": true, "violations": [] })));
            Ok(())
        }
        (Err(e), Format::Structured) => {
            let violations = match &e {
                ScenarioError::Validation(vs) => serde_json::json!(vs),
                ScenarioError::Parse { line, column, message } => {
                    serde_json::json!([{ "path": format!("line {line}, column {column}"), "message": message }])
                }
            };
            print!("{}", report::to_json(&serde_json::json!({ "scenario": origin, "valid": false, "violations": violations })));
            Err(Failure::Invalid(describe(&e, &origin)))
        }
        (Err(e), Format::Text) => Err(Failure::Invalid(describe(&e, &origin))),
    }
}

fn sample(scenario: &str, n: Option<usize>, seed: u64, out: Option<PathBuf>, out_dir: PathBuf) -> CliResult {
    let spec = load(scenario)?;
    let mut pop = spec.population.clone();
    if let Some(n) = n {
        if n == 0 {
            return Err(invalid("--n must be at least 1"));
        }
        pop.n = n;
    }
    let agents = sample_population(&pop, seed);
    let path = out.unwrap_or_else(|| out_dir.join("population.csv"));
    write_file(&path, &report::population_csv(&agents).map_err(runtime)?)?;
    println!("wrote {} agents to {}", agents.len(), path.display());
    Ok(())
}

struct RunArgs {
    seed: u64,
    out_dir: PathBuf,
    disable: Vec<String>,
    enable: Vec<String>,
    horizon: Option<u32>,
    aggregation: Option<Mode>,
    epsilon: Option<f64>,
    weight: Option<f64>,
    format: Format,
}

fn aggregation(args: &RunArgs) -> CliResult<Option<AggregationMode>> {
    let name = match args.aggregation {
        None if args.epsilon.is_none() && args.weight.is_none() => return Ok(None),
        None => return Err(invalid("--epsilon/--weight need --aggregation")),
        Some(Mode::Lexicographic) => "lexicographic",
        Some(Mode::Weighted) => "weighted",
        Some(Mode::NeedConstrained) => "need_constrained",
    };
    let mode = AggregationMode::from_parts(name, args.epsilon, args.weight).map_err(invalid)?;
    mode.check().map_err(invalid)?;
    Ok(Some(mode))
}

fn text_summary(metrics: &EquityMetrics, files: &[PathBuf]) -> String {
    let mut out = format!("{} seed {}: {} agents, {} ticks\n", metrics.scenario, metrics.seed, metrics.agents, metrics.horizon);
    for (cap, m) in metrics.capabilities.iter().filter(|(_, m)| m.modelled) {
        let _ = writeln!(
            out,
            "  {cap}: deprivation {} functioning {}",
            m.deprivation_ratio.unwrap_or(0.0),
            m.functioning_rate.unwrap_or(0.0)
        );
    }
    for (payer, spent) in &metrics.expenses {
        let _ = writeln!(out, "  expenses {payer}: {spent}");
    }
    for norm in &metrics.norm_ledger {
        let state = if norm.enabled { "enabled" } else { "disabled" };
        let _ = writeln!(out, "  norm {} ({state}): {} activations", norm.id, norm.activations);
    }
    for f in files {
        let _ = writeln!(out, "wrote {}", f.display());
    }
    out
}

fn run(scenario: &str, args: RunArgs) -> CliResult {
    let spec = load(scenario)?;
    let overrides: BTreeMap<String, bool> =
        args.disable.iter().map(|id| (id.clone(), false)).chain(args.enable.iter().map(|id| (id.clone(), true))).collect();
    let spec = spec.with_norm_overrides(&overrides).map_err(invalid)?;
    let opts = RunOptions { horizon: args.horizon, aggregation: aggregation(&args)?, ..Default::default() };
    let result = run_with(&spec, args.seed, &opts).map_err(runtime)?;
    let metrics = compute_metrics(&result, &spec);
    let files = report::write_run(&args.out_dir, &result, &metrics, &spec).map_err(runtime)?;
    match args.format {
        Format::Text => print!("{}", text_summary(&metrics, &files)),
        Format::Structured => print!("{}", report::to_json(&metrics)),
    }
    Ok(())
}

fn read_metrics(path: &Path) -> CliResult<EquityMetrics> {
    let bytes = fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| invalid(format!("{}: not a metrics file: {e}", path.display())))
}

fn delta_text(d: &DeltaReport) -> String {
    let mut out = format!("{} -> {}\n", d.baseline, d.variant);
    for (cap, c) in &d.capabilities {
        let _ = writeln!(out, "  {cap}: deprivation {:+} functioning {:+} ({:?})", c.deprivation_ratio, c.functioning_rate, c.verdict);
    }
    for (payer, x) in &d.expenses {
        let _ = writeln!(out, "  expenses {payer}: {x:+}");
    }
    out
}

fn compare_files(a: &Path, b: &Path, out: Option<PathBuf>, format: Format) -> CliResult {
    let delta = compare(&read_metrics(a)?, &read_metrics(b)?).map_err(invalid)?;
    let body = match format {
        Format::Structured => report::to_json(&delta),
        Format::Text => delta_text(&delta),
    };
    match out {
        Some(path) => write_file(&path, &body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn inspect(scenario: &str, health: &str, housing: &str, registration: &str) -> CliResult {
    let spec = load(scenario)?;
    let level: i64 = health.parse().map_err(|_| invalid(format!("bad health level `{health}`")))?;
    let state = PersonalState::new(
        HealthLevel::new(level).map_err(invalid)?,
        housing.parse::<Housing>().map_err(invalid)?,
        registration.parse::<Registration>().map_err(invalid)?,
    );
    let mut agent: AgentProfile = sample_population(&spec.population, 0).remove(0);
    agent.state = state;
    let compiled = capsim::mdp::compile(&agent, &spec).map_err(runtime)?;
    print!("{}", report::to_json(&compiled.dump()));
    Ok(())
}

fn serve(host: &str, port: u16, workers: usize, persist_dir: Option<PathBuf>) -> CliResult {
    let addr: SocketAddr = format!("{host}:{port}").parse().map_err(invalid)?;
    let config = ServiceConfig { workers, persist_dir, ..Default::default() };
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    eprintln!("listening on http://{addr}");
    rt.block_on(capsim_service::serve(addr, config)).map_err(runtime)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { scenario, format } => validate(&scenario, format),
        Command::Sample { scenario, n, seed, out, out_dir } => sample(&scenario, n, seed, out, out_dir),
        Command::Run { scenario, seed, out_dir, disable, enable, horizon, aggregation, epsilon, weight, format } => run(
            &scenario,
            RunArgs { seed, out_dir, disable, enable, horizon, aggregation, epsilon, weight, format },
        ),
        Command::Compare { a, b, out, format } => compare_files(&a, &b, out, format),
        Command::Inspect { scenario, health, housing, registration } => inspect(&scenario, &health, &housing, &registration),
        Command::Serve { port, host, workers, persist_dir } => serve(&host, port, workers, persist_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

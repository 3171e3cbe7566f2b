//! `boxloop`: run model-discovery searches, fit single programs, compare
//! scores, report on and replay stored runs, and simulate datasets.
//!
//! Exit status: 0 success, 1 configuration or usage error, 2 run failure,
//! 3 replay mismatch. Errors are written to stderr as one JSON object.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use boxloop_core::boxloop::{AgentKind, Backend, LoopConfig, LoopData, PplScorer};
use boxloop_core::io::{self, DataOptions, ElpdSummary, IoError, RunConfig, RunError, StoredRun};
use boxloop_core::ode::lv;
use boxloop_core::{fixtures, inference, probprog};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "boxloop", version, about = "Automated statistical model discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search Gaussian-process kernels for a time series.
    GpSearch(SearchArgs),
    /// Search probabilistic programs for a table.
    PplSearch(SearchArgs),
    /// Search ODE and hybrid neural-ODE models for trajectories.
    OdeSearch(SearchArgs),
    /// Fit one program and print its score, predictive summary and details.
    Fit(ProgramArgs),
    /// Score one program (for programs: the full convergence and LOO report).
    Score(ProgramArgs),
    /// Compare two elpd estimates with the 4 SE rule.
    Compare(CompareArgs),
    /// Write the report and figures of a stored run.
    Report(ReportArgs),
    /// Re-fit every scored proposal of a stored run and check the scores.
    Replay(ReplayArgs),
    /// Emit a simulated dataset as CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct SearchArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset supplying loop defaults.
    #[arg(long)]
    preset: Option<String>,
    /// Dataset name or CSV path.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    proposals: Option<usize>,
    /// scripted or lm.
    #[arg(long)]
    proposer: Option<String>,
    /// scripted, lm or none.
    #[arg(long)]
    critic: Option<String>,
    #[arg(long)]
    proposer_fixture: Option<PathBuf>,
    #[arg(long)]
    critic_fixture: Option<PathBuf>,
    /// Parent directory of the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config key, e.g. `--set exemplars=2 --set data.split=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Also write the report and figures into the run directory.
    #[arg(long)]
    report: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset name or CSV path.
    #[arg(long)]
    data: String,
    /// Modeled column of a table.
    #[arg(long)]
    target: Option<String>,
    /// First held-out row of a series.
    #[arg(long)]
    split: Option<usize>,
    /// Last training time of a trajectory dataset.
    #[arg(long)]
    train_end: Option<f64>,
    /// Noise seed of simulated datasets.
    #[arg(long)]
    data_seed: Option<u64>,
    /// File replacing the dataset description.
    #[arg(long)]
    metadata: Option<PathBuf>,
}

impl DataArgs {
    fn options(&self) -> DataOptions {
        DataOptions { target: self.target.clone(), split: self.split, train_end: self.train_end, seed: self.data_seed }
    }

    fn load(&self, backend: Backend) -> Result<LoopData, CliError> {
        Ok(io::resolve(backend, &self.data, &self.options(), self.metadata.as_deref())?)
    }
}

#[derive(Args)]
struct ProgramArgs {
    /// gp, ppl or ode.
    #[arg(long)]
    backend: String,
    /// Program file, bundled program name, or literal source.
    #[arg(long)]
    program: String,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Allow the augmented kernel set.
    #[arg(long)]
    augmented: bool,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Print difference, standard error and verdict as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory or its record.json.
    run: PathBuf,
    /// Reference program (file, bundled name or source); defaults to the
    /// dataset's reference if there is one.
    #[arg(long)]
    reference: Option<String>,
    /// Output directory (default: the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Run directory or its record.json.
    run: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// lv_decaying, lv_oscillating, duffing, van_der_pol or cubic_damped.
    #[arg(long, conflicts_with = "program")]
    preset: Option<String>,
    /// Program whose prior predictive replaces the observed columns.
    #[arg(long, requires = "data")]
    program: Option<String>,
    /// Table providing covariates (with --program).
    #[arg(long)]
    data: Option<String>,
    /// Fixed parameter value, `name=v` or `name=v1,v2,..`.
    #[arg(long = "fix", value_name = "NAME=VALUE")]
    fix: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the drawn parameters here as JSON (with --program).
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Run(String, serde_json::Value),
    Mismatch(String, serde_json::Value),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Run(..) => 2,
            CliError::Mismatch(..) => 3,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let (kind, message, detail) = match self {
            CliError::Config(m) => ("config", m, serde_json::Value::Null),
            CliError::Run(m, d) => ("run_failure", m, d.clone()),
            CliError::Mismatch(m, d) => ("replay_mismatch", m, d.clone()),
        };
        let mut e = json!({"kind": kind, "exit_code": self.code(), "message": message});
        if !detail.is_null() {
            e["detail"] = detail;
        }
        json!({ "error": e })
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(e) => e.into(),
            RunError::Loop(f) => CliError::Run(
                f.error.to_string(),
                json!({"run_id": f.record.run_id, "rounds_completed": f.record.rounds.len()}),
            ),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.code());
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::GpSearch(a) => search(Backend::Gp, a),
        Command::PplSearch(a) => search(Backend::Ppl, a),
        Command::OdeSearch(a) => search(Backend::Ode, a),
        Command::Fit(a) => fit(a, false),
        Command::Score(a) => fit(a, true),
        Command::Compare(a) => compare(a),
        Command::Report(a) => report(a),
        Command::Replay(a) => replay(a),
        Command::Simulate(a) => simulate(a),
    }
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &impl serde::Serialize) {
    emit(&(serde_json::to_string_pretty(v).expect("output serializes") + "\n"));
}

fn search_config(backend: Backend, a: &SearchArgs) -> Result<RunConfig, CliError> {
    let mut rc = match (&a.config, &a.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig {
            loop_config: LoopConfig { backend, ..LoopConfig::default() },
            paths: Default::default(),
            data: Default::default(),
        },
    };
    if let (Some(_), Some(name)) = (&a.config, &a.preset) {
        rc.set("preset", &format!("\"{name}\""))?;
    }
    if let Some(d) = &a.dataset {
        rc.loop_config.dataset = d.clone();
        rc.paths.dataset = None;
    }
    let lc = &mut rc.loop_config;
    lc.seed = a.seed.unwrap_or(lc.seed);
    lc.rounds = a.rounds.unwrap_or(lc.rounds);
    lc.proposals = a.proposals.unwrap_or(lc.proposals);
    for (key, value) in [("proposer", &a.proposer), ("critic", &a.critic)] {
        if let Some(v) = value {
            rc.set(key, &format!("\"{v}\""))?;
        }
    }
    if let Some(p) = &a.proposer_fixture {
        rc.paths.proposer_fixture = Some(p.clone());
    }
    if let Some(p) = &a.critic_fixture {
        rc.paths.critic_fixture = Some(p.clone());
    }
    if let Some(p) = &a.out {
        rc.paths.output_dir = Some(p.clone());
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        rc.set(k.trim(), v.trim())?;
    }
    if rc.loop_config.backend != backend {
        return Err(CliError::Config(format!(
            "configuration is for the {} backend; use {}-search",
            rc.loop_config.backend.name(),
            rc.loop_config.backend.name()
        )));
    }
    Ok(rc)
}

fn search(backend: Backend, a: SearchArgs) -> Result<(), CliError> {
    let rc = search_config(backend, &a)?;
    if a.print_config {
        emit(&rc.to_toml()?);
        return Ok(());
    }
    let out = io::run(rc)?;
    let rec = &out.result.record;
    let best = &out.result.best;
    print_json(&json!({
        "run_id": rec.run_id,
        "dir": out.dir.display().to_string(),
        "rounds": rec.rounds.len(),
        "success_rate": rec.success_rate(),
        "best": {"round": best.round, "index": best.index, "score": best.score, "source": best.source},
    }));
    if a.report {
        StoredRun::load(&out.dir)?.report(None, None)?;
    }
    Ok(())
}

fn parse_backend(s: &str) -> Result<Backend, CliError> {
    s.parse::<Backend>().map_err(|e| CliError::Config(e.to_string()))
}

/// A program given as a file, a bundled name, or literal source.
fn program_source(spec: &str) -> Result<String, CliError> {
    let path = Path::new(spec);
    if path.is_file() {
        return std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{spec}: {e}")));
    }
    if let Some(src) = fixtures::program_source(spec) {
        return Ok(src.to_string());
    }
    if let Some(src) = lv::named_spec(spec) {
        return Ok(src.to_string());
    }
    Ok(spec.to_string())
}

fn fit(a: ProgramArgs, report_only: bool) -> Result<(), CliError> {
    let backend = parse_backend(&a.backend)?;
    let data = a.data.load(backend)?;
    let source = program_source(&a.program)?;
    if report_only {
        if let LoopData::Ppl { table, .. } = &data {
            // The full report, whether or not the convergence gate passed.
            let program = probprog::parse_model(&source).map_err(|e| CliError::Run(e.to_string(), json!({"kind": "parse_error"})))?;
            let cfg = PplScorer::sampler(a.seed);
            let (_, report) = inference::score_model(&program, table, &cfg)
                .map_err(|e| CliError::Run(e.to_string(), json!({"kind": "inference_error"})))?;
            print_json(&report);
            return Ok(());
        }
    }
    let cfg = LoopConfig { backend, augmented_kernels: a.augmented, proposer: AgentKind::None, ..LoopConfig::default() };
    let scored = data
        .scorer(&cfg)
        .score(&source, a.seed)
        .map_err(|f| CliError::Run(format!("{}: {}", f.kind, f.message), json!({"kind": f.kind})))?;
    if report_only {
        let mut out = json!({"metric": backend.metric(), "score": scored.score});
        if let serde_json::Value::Object(d) = &scored.details {
            for (k, v) in d {
                out[k] = v.clone();
            }
        }
        print_json(&out);
    } else {
        print_json(&scored);
    }
    Ok(())
}

fn read_json(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn compare(a: CompareArgs) -> Result<(), CliError> {
    let sa = ElpdSummary::from_json(&read_json(&a.a)?)?;
    let sb = ElpdSummary::from_json(&read_json(&a.b)?)?;
    let c = io::compare_summaries(&sa, &sb);
    if a.json {
        print_json(&c);
    } else {
        emit(&format!("{}\n", c.verdict));
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let run = StoredRun::load(&a.run)?;
    let reference = a.reference.as_deref().map(program_source).transpose()?;
    let r = run.report(reference, a.out.as_deref())?;
    emit(&r.to_markdown());
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<(), CliError> {
    let run = StoredRun::load(&a.run)?;
    let r = run.replay()?;
    print_json(&r);
    if r.ok() {
        Ok(())
    } else {
        Err(CliError::Mismatch(
            format!("{} of {} stored scores differ on replay", r.mismatches.len(), r.checked),
            serde_json::to_value(&r.mismatches).expect("mismatches serialize"),
        ))
    }
}

fn parse_fixed(items: &[String]) -> Result<BTreeMap<String, Vec<f64>>, CliError> {
    items
        .iter()
        .map(|kv| {
            let bad = || CliError::Config(format!("--fix expects NAME=VALUE[,VALUE..], got `{kv}`"));
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            let vals: Result<Vec<f64>, _> = v.split(',').map(|x| x.trim().parse::<f64>()).collect();
            Ok((k.trim().to_string(), vals.map_err(|_| bad())?))
        })
        .collect()
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Config(format!("{}: {e}", p.display()))),
        None => {
            emit(text);
            Ok(())
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    match (&a.preset, &a.program) {
        (Some(name), None) => write_out(a.out.as_deref(), &io::simulate_preset(name, a.seed)?),
        (None, Some(program)) => {
            let data = a.data.as_deref().expect("clap requires --data");
            let LoopData::Ppl { table, .. } = io::resolve(Backend::Ppl, data, &DataOptions::default(), None)? else {
                unreachable!("ppl datasets are tables")
            };
            let (sim, draw) = io::simulate_program(&program_source(program)?, &table, &parse_fixed(&a.fix)?, a.seed)
                .map_err(|e| CliError::Run(e.to_string(), serde_json::Value::Null))?;
            if let Some(p) = &a.params_out {
                let text = serde_json::to_string_pretty(&draw).expect("draws serialize");
                std::fs::write(p, text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            }
            write_out(a.out.as_deref(), &sim.to_csv())
        }
        _ => Err(CliError::Config("simulate needs --preset or --program".into())),
    }
}

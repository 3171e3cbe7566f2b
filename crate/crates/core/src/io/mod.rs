//! Configuration files, dataset resolution, run directories, reports and
//! figures.

pub mod config;
pub mod dataset;
pub mod plot;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

pub use config::{DataOptions, Paths, RunConfig};
pub use dataset::{reference_program, resolve};
pub use plot::emit_plots;
pub use report::{compare_summaries, ElpdSummary, Report};

use crate::boxloop::lm::{model_from_env, HttpChat};
use crate::boxloop::{
    replay, run_loop, AgentKind, BoxloopError, Critic, LmCritic, LmProposer, LoopData, LoopFailure, LoopResult, Proposer,
    ReplayReport, RunDir, RunRecord, Scorer, ScriptedCritic, ScriptedProposer, Templates,
};
use crate::probprog::{self, DataTable, PriorDraw};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IoError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<BoxloopError> for IoError {
    fn from(e: BoxloopError) -> Self {
        match e {
            BoxloopError::Io(m) => IoError::Io(m),
            BoxloopError::Data(m) => IoError::Data(m),
            other => IoError::Config(other.to_string()),
        }
    }
}

/// Name of the config copy stored in every run directory.
pub const RUN_CONFIG_FILE: &str = "run.toml";

/// Default parent directory of run directories.
pub const DEFAULT_OUTPUT_DIR: &str = "runs";

/// Backoff before the first LM retry.
const LM_BACKOFF: Duration = Duration::from_secs(2);

/// A config with its data loaded, ready to run, replay or report on.
pub struct Prepared {
    pub config: RunConfig,
    /// Dataset as loaded.
    pub raw: LoopData,
    /// Dataset as the agents and scorer see it (after anonymization).
    pub data: LoopData,
}

impl Prepared {
    pub fn new(mut config: RunConfig) -> Result<Self, IoError> {
        let spec = config.dataset_spec();
        if spec.is_empty() {
            return Err(IoError::Config("no dataset given".into()));
        }
        // The record keeps the resolved dataset so the run can be replayed.
        config.loop_config.dataset = spec.clone();
        config.loop_config.validate()?;
        let raw = resolve(config.loop_config.backend, &spec, &config.data, config.paths.metadata.as_deref())?;
        let data = raw.for_config(&config.loop_config)?;
        Ok(Self { config, raw, data })
    }

    pub fn scorer(&self) -> Arc<dyn Scorer> {
        self.data.scorer(&self.config.loop_config)
    }

    pub fn templates(&self) -> Result<Templates, IoError> {
        Ok(match &self.config.paths.templates {
            Some(dir) => Templates::from_dir(dir)?,
            None => Templates::default(),
        })
    }

    fn lm_client(&self) -> Result<(Arc<HttpChat>, String), IoError> {
        let cfg = &self.config.loop_config;
        let client = HttpChat::from_env(cfg.lm_endpoint.as_deref()).map_err(|e| IoError::Config(e.to_string()))?;
        let model = model_from_env(cfg.lm_model.as_deref()).map_err(|e| IoError::Config(e.to_string()))?;
        Ok((Arc::new(client), model))
    }

    pub fn proposer(&self) -> Result<Box<dyn Proposer>, IoError> {
        Ok(match self.config.loop_config.proposer {
            AgentKind::Scripted => {
                let path = self.config.paths.proposer_fixture.as_ref().ok_or_else(|| {
                    IoError::Config("a scripted proposer needs [paths] proposer_fixture".into())
                })?;
                Box::new(ScriptedProposer::from_file(path)?)
            }
            AgentKind::Lm => {
                let (client, model) = self.lm_client()?;
                Box::new(LmProposer { client, model, backoff: LM_BACKOFF })
            }
            AgentKind::None => return Err(IoError::Config("the proposer cannot be `none`".into())),
        })
    }

    pub fn critic(&self) -> Result<Box<dyn Critic>, IoError> {
        Ok(match self.config.loop_config.critic {
            AgentKind::Scripted => match &self.config.paths.critic_fixture {
                Some(path) => Box::new(ScriptedCritic::from_file(path)?),
                None => return Err(IoError::Config("a scripted critic needs [paths] critic_fixture".into())),
            },
            AgentKind::Lm => {
                let (client, model) = self.lm_client()?;
                Box::new(LmCritic { client, model, backoff: LM_BACKOFF })
            }
            // Never consulted.
            AgentKind::None => Box::new(ScriptedCritic::new(Vec::new())),
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.config.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

/// Why a configured run did not complete.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] IoError),
    #[error(transparent)]
    Loop(#[from] LoopFailure),
}

pub struct RunOutcome {
    pub result: LoopResult,
    pub dir: PathBuf,
}

/// Runs the loop for a config, writing `<output_dir>/<run_id>/`.
pub fn run(config: RunConfig) -> Result<RunOutcome, RunError> {
    let p = Prepared::new(config)?;
    let templates = p.templates()?;
    let mut proposer = p.proposer()?;
    let mut critic = p.critic()?;
    let mut sink = RunDir::new(&p.output_dir(), &p.config.loop_config);
    write_file(&sink.root.join(RUN_CONFIG_FILE), &p.config.to_toml()?)?;
    let result = run_loop(
        &p.config.loop_config,
        &p.data.view(),
        &templates,
        proposer.as_mut(),
        critic.as_mut(),
        &p.scorer(),
        Some(&mut sink),
    )?;
    Ok(RunOutcome { result, dir: sink.root })
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| IoError::Io(format!("{}: {e}", d.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| IoError::Io(format!("{}: {e}", path.display())))
}

/// A stored run: its record and the config that produced it.
pub struct StoredRun {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub prepared: Prepared,
}

impl StoredRun {
    /// Loads a run directory (or its `record.json`). Without a stored
    /// `run.toml` the record's own loop config is used.
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let dir = if path.is_dir() { path.to_path_buf() } else { path.parent().unwrap_or(Path::new(".")).to_path_buf() };
        let record = RunDir::load(path)?;
        let cfg_path = dir.join(RUN_CONFIG_FILE);
        let mut config = if cfg_path.is_file() {
            RunConfig::load(&cfg_path)?
        } else {
            RunConfig { loop_config: record.config.clone(), paths: Paths::default(), data: DataOptions::default() }
        };
        config.loop_config = record.config.clone();
        config.paths.dataset = None;
        let prepared = Prepared::new(config)?;
        Ok(Self { dir, record, prepared })
    }

    pub fn replay(&self) -> Result<ReplayReport, IoError> {
        Ok(replay(&self.record, self.prepared.scorer().as_ref())?)
    }

    /// Builds the report, scoring the reference program (if any) with the
    /// run's master seed, and writes `report.md`, `report.json` and the
    /// figures into `out` (default: the run directory).
    pub fn report(&self, reference: Option<String>, out: Option<&Path>) -> Result<Report, IoError> {
        let cfg = &self.prepared.config.loop_config;
        let reference = reference.or_else(|| reference_program(cfg.backend, &cfg.dataset));
        let scored = reference.as_ref().map(|src| self.prepared.scorer().score(src, cfg.seed));
        let mut report = Report::build(&self.record, reference.as_deref().zip(scored.as_ref()));
        let out = out.unwrap_or(&self.dir);
        let plots = emit_plots(&self.record, &self.prepared.data, scored.as_ref().and_then(|r| r.as_ref().ok()), out)?;
        report.plots = plots.iter().filter_map(|p| p.file_name()?.to_str().map(str::to_string)).collect();
        write_file(&out.join("report.md"), &report.to_markdown())?;
        write_file(&out.join("report.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
        Ok(report)
    }
}

/// CSV of a named simulated dataset (`lv_decaying`, `lv_oscillating`, an
/// oscillator).
pub fn simulate_preset(name: &str, seed: u64) -> Result<String, IoError> {
    let d = dataset::simulate_named(name, seed)?.ok_or_else(|| {
        IoError::Config(format!("unknown simulation preset `{name}` (known: {})", dataset::known_names(crate::boxloop::Backend::Ode)[..].join(", ")))
    })?;
    Ok(d.to_csv())
}

/// Synthetic copy of `table`: parameters drawn from the program's priors
/// (or taken from `fixed`), then observations from its likelihood.
pub fn simulate_program(
    source: &str,
    table: &DataTable,
    fixed: &BTreeMap<String, Vec<f64>>,
    seed: u64,
) -> Result<(DataTable, PriorDraw), IoError> {
    let program = probprog::parse_model(source).map_err(|e| IoError::Data(e.to_string()))?;
    let mut rng = rng_for(seed, &[0x5a]);
    let draw = probprog::sample_prior(&program, table, fixed, &mut rng).map_err(|e| IoError::Data(e.to_string()))?;
    let t = draw.apply_to(table).map_err(|e| IoError::Data(e.to_string()))?;
    Ok((t, draw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxloop::CandidateStatus;
    use crate::fixtures;

    fn scripted_gp(dir: &Path) -> RunConfig {
        let proposals = dir.join("p.json");
        std::fs::write(&proposals, r#"{"rounds": [["ExpQuad", "Periodic + Linear", "Bogus"], ["ExpQuad * Periodic", "Linear", "ExpQuad + Linear"]]}"#).unwrap();
        let critic = dir.join("c.json");
        std::fs::write(&critic, r#"{"texts": ["Try periodic structure."]}"#).unwrap();
        let text = format!(
            "[loop]\npreset = \"gp_base\"\ndataset = \"air\"\nproposer = \"scripted\"\ncritic = \"scripted\"\nmax_parallel = 1\n\n\
             [paths]\nproposer_fixture = \"p.json\"\ncritic_fixture = \"c.json\"\noutput_dir = \"runs\"\n\n[data]\nsplit = 100\n"
        );
        RunConfig::parse(&text, dir).unwrap()
    }

    #[test]
    fn configured_run_replay_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(scripted_gp(dir.path())).unwrap();
        let rec = &out.result.record;
        assert_eq!(out.dir, dir.path().join("runs").join("gp_base-air-s0"));
        assert_eq!(rec.rounds.len(), 2);
        assert!(matches!(rec.rounds[0].candidates[2].status, CandidateStatus::FitFailed(_)));
        assert!((rec.rounds[0].success_rate - 2.0 / 3.0).abs() < 1e-12);

        let stored = StoredRun::load(&out.dir).unwrap();
        assert_eq!(&stored.record, rec);
        let LoopData::Gp(d) = &stored.prepared.data else { panic!() };
        assert_eq!(d.split, 100);
        assert!(stored.replay().unwrap().ok());

        let report = stored.report(None, None).unwrap();
        assert_eq!((report.proposals, report.succeeded), (6, 5));
        assert_eq!(report.failures.get("parse_error"), Some(&1));
        assert_eq!(report.plots, ["scores.svg", "fit.svg"]);
        let best = rec.best_candidate().unwrap();
        assert_eq!(report.best.as_ref().unwrap().score, best.score.unwrap());
        for f in ["report.md", "report.json", "scores.svg", "fit.svg", RUN_CONFIG_FILE] {
            assert!(out.dir.join(f).is_file(), "{f}");
        }
        let fit = std::fs::read_to_string(out.dir.join("fit.svg")).unwrap();
        assert_eq!(fit.matches(plot::EXTRAPOLATION_CLASS).count(), 1);
    }

    #[test]
    fn missing_fixture_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = scripted_gp(dir.path());
        c.paths.proposer_fixture = None;
        assert!(matches!(run(c), Err(RunError::Config(IoError::Config(_)))));
    }

    #[test]
    fn simulations() {
        let csv = simulate_preset("lv_decaying", 0).unwrap();
        assert!(csv.starts_with("t,b,c\n"));
        assert_eq!(csv, simulate_preset("lv_decaying", 0).unwrap());
        assert_ne!(csv, simulate_preset("lv_decaying", 1).unwrap());
        assert!(matches!(simulate_preset("nope", 0), Err(IoError::Config(_))));

        let table = fixtures::dataset("dugongs").unwrap();
        let src = fixtures::program_source("dugongs_expert").unwrap();
        // Diffuse priors must be pinned; the rest are drawn.
        assert!(matches!(simulate_program(src, &table, &BTreeMap::new(), 3), Err(IoError::Data(_))));
        let fixed: BTreeMap<String, Vec<f64>> =
            [("alpha", 2.65), ("beta", 1.0), ("tau", 100.0)].into_iter().map(|(k, v)| (k.to_string(), vec![v])).collect();
        let (a, draw) = simulate_program(src, &table, &fixed, 3).unwrap();
        let (b, _) = simulate_program(src, &table, &fixed, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.column("age"), table.column("age"));
        assert_ne!(a.column("length"), table.column("length"));
        assert_eq!(draw.param("alpha"), Some(&[2.65][..]));
        let lambda = draw.param("lambda").unwrap()[0];
        assert!((0.5..1.0).contains(&lambda));
    }
}

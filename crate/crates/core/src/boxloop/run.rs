//! The loop driver, on-disk run artifacts and offline replay.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::agents::{Critic, CriticContext, ProposalContext, Proposer};
use super::render::{DatasetView, Exemplar, Templates, TEMPLATE_VERSION};
use super::scorer::{score_all, Job, Scorer};
use super::{
    best_of, top_k, AgentKind, Backend, BoxloopError, CandidateProgram, CandidateStatus, CriticPool, CriticismState,
    LoopConfig, RoundRecord, RunRecord,
};
use crate::rng::derive_seed;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub struct LoopResult {
    pub record: RunRecord,
    pub best: CandidateProgram,
}

/// A failed run keeps everything recorded up to the failure.
#[derive(Debug)]
pub struct LoopFailure {
    pub record: Box<RunRecord>,
    pub error: BoxloopError,
}

impl std::fmt::Display for LoopFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run {} failed: {}", self.record.run_id, self.error)
    }
}

impl std::error::Error for LoopFailure {}

/// Deterministic run identifier.
pub fn run_id(cfg: &LoopConfig) -> String {
    let label = cfg.preset.clone().unwrap_or_else(|| cfg.backend.name().to_string());
    let data: String =
        cfg.dataset.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect();
    format!("{label}-{data}-s{}", cfg.seed)
}

/// Seed for fitting proposal `index` of `round`.
pub fn candidate_seed(master: u64, round: usize, index: usize) -> u64 {
    derive_seed(master, &[0xb0c5, round as u64, index as u64])
}

/// Runs the loop. The record (and, with a `sink`, the run directory) is
/// updated after every round.
pub fn run_loop(
    cfg: &LoopConfig,
    view: &DatasetView,
    templates: &Templates,
    proposer: &mut dyn Proposer,
    critic: &mut dyn Critic,
    scorer: &Arc<dyn Scorer>,
    mut sink: Option<&mut RunDir>,
) -> Result<LoopResult, LoopFailure> {
    let mut record = RunRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        run_id: run_id(cfg),
        config: cfg.clone(),
        template_version: TEMPLATE_VERSION,
        rounds: Vec::new(),
        best: None,
    };
    let fail = |record: &RunRecord, error| LoopFailure { record: Box::new(record.clone()), error };
    if let Err(e) = cfg.validate() {
        return Err(fail(&record, e));
    }
    if scorer.backend() != cfg.backend {
        let e = BoxloopError::Config(format!("scorer is for {}, config for {}", scorer.backend().name(), cfg.backend.name()));
        return Err(fail(&record, e));
    }
    if let Some(s) = sink.as_deref_mut() {
        if let Err(e) = s.start(&record) {
            return Err(fail(&record, e));
        }
    }
    let timeout = Duration::from_secs(cfg.fit_timeout_secs);
    let mut exemplars: Vec<Exemplar> = Vec::new();
    let mut criticism: Option<CriticismState> = None;
    for t in 0..cfg.rounds {
        let ctx = ProposalContext {
            round: t,
            config: cfg,
            view,
            templates,
            exemplars: &exemplars,
            criticism: criticism.as_ref(),
        };
        let proposals = match proposer.propose(&ctx) {
            Ok(p) if p.len() == cfg.proposals => p,
            Ok(p) => {
                let e = BoxloopError::Proposer(format!("expected {} proposals, got {}", cfg.proposals, p.len()));
                return Err(fail(&record, e));
            }
            Err(e) => return Err(fail(&record, e)),
        };
        let mut transcripts: Vec<_> = proposals.iter().filter_map(|p| p.transcript.clone()).collect();
        let seeds: Vec<u64> = (0..proposals.len()).map(|i| candidate_seed(cfg.seed, t, i)).collect();
        let jobs = proposals.iter().zip(&seeds).map(|(p, &seed)| Job { source: p.source.clone(), seed }).collect();
        let results = score_all(scorer, jobs, timeout, cfg.parallelism());
        let candidates: Vec<CandidateProgram> = proposals
            .into_iter()
            .zip(results)
            .enumerate()
            .map(|(i, (p, r))| {
                let source = p.source.unwrap_or_default();
                let base = CandidateProgram {
                    backend: cfg.backend,
                    round: t,
                    index: i,
                    source,
                    seed: seeds[i],
                    status: CandidateStatus::Proposed,
                    score: None,
                    stats: None,
                    details: None,
                };
                match r {
                    Ok(s) => CandidateProgram {
                        status: CandidateStatus::FitOk,
                        score: Some(s.score),
                        stats: Some(s.stats),
                        details: Some(s.details),
                        ..base
                    },
                    Err(f) => CandidateProgram { status: CandidateStatus::FitFailed(f), ..base },
                }
            })
            .collect();
        let ok = candidates.iter().filter(|c| c.is_ok()).count();
        let ex_idx = top_k(&candidates, cfg.exemplars);
        exemplars = ex_idx
            .iter()
            .map(|&i| Exemplar { round: t, index: i, source: candidates[i].source.clone(), score: candidates[i].score.unwrap() })
            .collect();
        let mut round = RoundRecord {
            round: t,
            candidates,
            exemplars: ex_idx,
            criticism: None,
            transcripts: Vec::new(),
            success_rate: ok as f64 / cfg.proposals as f64,
        };
        if cfg.critic != AgentKind::None && (t + 1 < cfg.rounds || cfg.criticize_last_round) {
            let pool: Vec<&CandidateProgram> = {
                let mut all: Vec<&CandidateProgram> = match cfg.critic_pool {
                    CriticPool::BestSoFar => record.candidates().chain(&round.candidates).filter(|c| c.is_ok()).collect(),
                    CriticPool::RoundTop => round.candidates.iter().filter(|c| c.is_ok()).collect(),
                };
                all.sort_by(|a, b| b.score.unwrap().total_cmp(&a.score.unwrap()).then((a.round, a.index).cmp(&(b.round, b.index))));
                all.truncate(cfg.critic_pool_size);
                all
            };
            let next = if pool.is_empty() {
                CriticismState::carried(criticism.as_ref(), cfg.critic_variant, t, "no valid fits".into())
            } else {
                let provenance = pool.iter().map(|c| (c.round, c.index)).collect();
                let cctx = CriticContext { round: t, config: cfg, view, templates, programs: pool, previous: criticism.as_ref() };
                let reply = critic.criticize(&cctx);
                transcripts.extend(reply.transcript);
                match reply.text {
                    Ok(text) => CriticismState::next(criticism.as_ref(), cfg.critic_variant, t, &text, provenance),
                    Err(e) => CriticismState::carried(criticism.as_ref(), cfg.critic_variant, t, format!("critic failed: {e}")),
                }
            };
            round.criticism = Some(next.clone());
            criticism = Some(next);
        }
        round.transcripts = transcripts;
        record.rounds.push(round);
        record.best = best_of(record.candidates()).map(|c| (c.round, c.index));
        if let Some(s) = sink.as_deref_mut() {
            if let Err(e) = s.append_round(&record) {
                return Err(fail(&record, e));
            }
        }
    }
    match record.best_candidate().cloned() {
        Some(best) => Ok(LoopResult { record, best }),
        None => Err(fail(&record, BoxloopError::NoValidPrograms)),
    }
}

/// Run artifacts on disk:
///
/// ```text
/// <root>/config.json
/// <root>/record.json
/// <root>/round_<t>/proposal_<i>.src
/// <root>/round_<t>/scores.json
/// <root>/round_<t>/criticism.txt
/// <root>/transcripts/<t>_<i>.json      (<t>_critic.json for the critic)
/// ```
pub struct RunDir {
    pub root: PathBuf,
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    index: usize,
    seed: u64,
    #[serde(flatten)]
    status: &'a CandidateStatus,
    score: Option<f64>,
}

fn io(p: &Path, e: impl std::fmt::Display) -> BoxloopError {
    BoxloopError::Io(format!("{}: {e}", p.display()))
}

fn write(p: &Path, contents: impl AsRef<[u8]>) -> Result<(), BoxloopError> {
    if let Some(d) = p.parent() {
        std::fs::create_dir_all(d).map_err(|e| io(d, e))?;
    }
    std::fs::write(p, contents).map_err(|e| io(p, e))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("record types serialize")
}

impl RunDir {
    /// `<base>/<run_id>`, created on [`RunDir::start`].
    pub fn new(base: &Path, cfg: &LoopConfig) -> Self {
        Self { root: base.join(run_id(cfg)) }
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn record_path(&self) -> PathBuf {
        self.root.join("record.json")
    }

    pub fn start(&mut self, record: &RunRecord) -> Result<(), BoxloopError> {
        write(&self.root.join("config.json"), json(&record.config))?;
        write(&self.record_path(), json(record))
    }

    /// Writes the newest round's files and rewrites `record.json`.
    pub fn append_round(&mut self, record: &RunRecord) -> Result<(), BoxloopError> {
        let Some(r) = record.rounds.last() else { return Ok(()) };
        let dir = self.root.join(format!("round_{}", r.round));
        for c in &r.candidates {
            write(&dir.join(format!("proposal_{}.src", c.index)), &c.source)?;
        }
        let lines: Vec<ScoreLine> =
            r.candidates.iter().map(|c| ScoreLine { index: c.index, seed: c.seed, status: &c.status, score: c.score }).collect();
        write(&dir.join("scores.json"), json(&lines))?;
        if let Some(h) = &r.criticism {
            let mut text = h.text.clone();
            if let Some(n) = &h.note {
                text.push_str(&format!("\n[{n}]\n"));
            }
            write(&dir.join("criticism.txt"), text)?;
        }
        for tr in &r.transcripts {
            let name = match tr.index {
                Some(i) => format!("{}_{i}.json", tr.round),
                None => format!("{}_critic.json", tr.round),
            };
            write(&self.root.join("transcripts").join(name), json(tr))?;
        }
        write(&self.record_path(), json(record))
    }

    pub fn load(path: &Path) -> Result<RunRecord, BoxloopError> {
        let file = if path.is_dir() { path.join("record.json") } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| io(&file, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| io(&file, e))?;
        let found = v.get("schema_version").and_then(|s| s.as_u64()).unwrap_or(0) as u32;
        if found != RECORD_SCHEMA_VERSION {
            return Err(BoxloopError::Schema { found, expected: RECORD_SCHEMA_VERSION });
        }
        serde_json::from_value(v).map_err(|e| io(&file, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMismatch {
    pub round: usize,
    pub index: usize,
    pub stored: f64,
    pub recomputed: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub checked: usize,
    pub mismatches: Vec<ReplayMismatch>,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Score agreement required by replay: exact for seeded MCMC, 1e-9
/// (relative to magnitude above one) for deterministic optimizers.
pub fn scores_match(backend: Backend, stored: f64, recomputed: f64) -> bool {
    match backend {
        Backend::Ppl => stored.to_bits() == recomputed.to_bits(),
        Backend::Gp | Backend::Ode => (stored - recomputed).abs() <= 1e-9 * stored.abs().max(1.0),
    }
}

/// Re-fits every successfully scored candidate with its stored seed.
pub fn replay(record: &RunRecord, scorer: &dyn Scorer) -> Result<ReplayReport, BoxloopError> {
    if record.schema_version != RECORD_SCHEMA_VERSION {
        return Err(BoxloopError::Schema { found: record.schema_version, expected: RECORD_SCHEMA_VERSION });
    }
    if scorer.backend() != record.config.backend {
        return Err(BoxloopError::Config("scorer backend differs from the record's".into()));
    }
    let mut report = ReplayReport { checked: 0, mismatches: Vec::new() };
    for c in record.candidates().filter(|c| c.is_ok()) {
        let stored = c.score.expect("fit_ok candidates carry a score");
        report.checked += 1;
        let m = |recomputed, error| ReplayMismatch { round: c.round, index: c.index, stored, recomputed, error };
        match scorer.score(&c.source, c.seed) {
            Ok(s) if scores_match(c.backend, stored, s.score) => {}
            Ok(s) => report.mismatches.push(m(Some(s.score), None)),
            Err(f) => report.mismatches.push(m(None, Some(format!("{}: {}", f.kind, f.message)))),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::agents::{ScriptedCritic, ScriptedProposer};
    use super::super::scorer::{FailureKind, GpScorer};
    use super::super::{CriticVariant, LoopData};
    use super::*;
    use crate::gp::{FitOptions, TimeSeriesDataset};

    fn setup() -> (LoopConfig, LoopData, Arc<dyn Scorer>) {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 4.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + (2.0 * v).sin()).collect();
        let data = LoopData::Gp(TimeSeriesDataset::new("toy", x, y).unwrap());
        let cfg = LoopConfig {
            rounds: 2,
            proposals: 3,
            exemplars: 2,
            proposer: AgentKind::Scripted,
            critic: AgentKind::Scripted,
            dataset: "toy".into(),
            seed: 11,
            ..LoopConfig::default()
        };
        let LoopData::Gp(d) = &data else { unreachable!() };
        let mut s = GpScorer::new(d.clone(), false);
        s.options = FitOptions { restarts: 1, steps: 40, ..FitOptions::default() };
        (cfg, data, Arc::new(s))
    }

    fn proposer() -> ScriptedProposer {
        ScriptedProposer::new(vec![
            vec!["Linear".into(), "Linear + Periodic".into(), "ExpQuad".into()],
            vec!["Linear + Periodic * ExpQuad".into(), "Linear +".into(), "Periodic".into()],
        ])
    }

    fn run(cfg: &LoopConfig, data: &LoopData, scorer: &Arc<dyn Scorer>, dir: Option<&mut RunDir>) -> Result<LoopResult, LoopFailure> {
        let mut critic = ScriptedCritic::new(vec!["add H1: linear trend; add H2: periodic component".into(), "delete H1".into()]);
        run_loop(cfg, &data.view(), &Templates::default(), &mut proposer(), &mut critic, scorer, dir)
    }

    #[test]
    fn deterministic_isolated_and_replayable() {
        let (cfg, data, scorer) = setup();
        let a = run(&cfg, &data, &scorer, None).unwrap();
        let b = run(&cfg, &data, &scorer, None).unwrap();
        assert_eq!(a.record, b.record);
        let r1 = &a.record.rounds[1];
        assert_eq!(r1.candidates[1].failure().unwrap().kind, FailureKind::ParseError);
        assert!((r1.success_rate - 2.0 / 3.0).abs() < 1e-12);
        assert!((a.record.success_rate() - 5.0 / 6.0).abs() < 1e-12);
        // Exemplars are the top two of their round, best first.
        let r0 = &a.record.rounds[0];
        let mut by_score: Vec<usize> = (0..3).collect();
        by_score.sort_by(|&i, &j| r0.candidates[j].score.unwrap().total_cmp(&r0.candidates[i].score.unwrap()));
        assert_eq!(r0.exemplars, by_score[..2]);
        // Criticism only between rounds; best is the global argmax.
        assert!(r0.criticism.is_some() && r1.criticism.is_none());
        let top = a.record.candidates().filter_map(|c| c.score).fold(f64::MIN, f64::max);
        assert_eq!(a.best.score, Some(top));
        let rm = a.record.running_max();
        assert!(rm[1].unwrap() >= rm[0].unwrap());

        let rep = replay(&a.record, &*scorer).unwrap();
        assert_eq!((rep.checked, rep.ok()), (5, true));
        let mut tampered = a.record.clone();
        tampered.rounds[0].candidates[0].source = "ExpQuad".into();
        let rep = replay(&tampered, &*scorer).unwrap();
        assert_eq!(rep.mismatches.len(), 1);
        assert_eq!((rep.mismatches[0].round, rep.mismatches[0].index), (0, 0));
    }

    #[test]
    fn run_dir_round_trip() {
        let (cfg, data, scorer) = setup();
        let tmp = tempfile::tempdir().unwrap();
        let mut dir = RunDir::new(tmp.path(), &cfg);
        let a = run(&cfg, &data, &scorer, Some(&mut dir)).unwrap();
        let root = tmp.path().join(run_id(&cfg));
        for f in ["config.json", "record.json", "round_0/proposal_2.src", "round_1/scores.json", "round_0/criticism.txt"] {
            assert!(root.join(f).exists(), "{f}");
        }
        assert_eq!(std::fs::read_to_string(root.join("round_1/proposal_1.src")).unwrap(), "Linear +");
        let loaded = RunDir::load(&root).unwrap();
        assert_eq!(loaded, a.record);
        assert!(replay(&loaded, &*scorer).unwrap().ok());
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("record.json")).unwrap()).unwrap();
        v["schema_version"] = 99.into();
        std::fs::write(root.join("record.json"), v.to_string()).unwrap();
        assert!(matches!(RunDir::load(&root), Err(BoxloopError::Schema { found: 99, .. })));
    }

    #[test]
    fn state_space_criticism() {
        let (mut cfg, data, scorer) = setup();
        cfg.critic_variant = CriticVariant::StateSpace;
        cfg.criticize_last_round = true;
        let a = run(&cfg, &data, &scorer, None).unwrap();
        let h = a.record.rounds[1].criticism.as_ref().unwrap();
        assert_eq!(h.hypotheses.len(), 1);
        assert_eq!(h.hypotheses[0].id, "H2");
        assert_eq!(h.history.len(), 3);
    }

    #[test]
    fn single_round_and_failures() {
        let (mut cfg, data, scorer) = setup();
        cfg.rounds = 1;
        let a = run(&cfg, &data, &scorer, None).unwrap();
        assert!(a.record.rounds[0].criticism.is_none());
        assert_eq!(a.best.round, 0);

        cfg.rounds = 3;
        let e = run(&cfg, &data, &scorer, None).unwrap_err();
        assert!(matches!(e.error, BoxloopError::Fixture(_)));
        assert_eq!(e.record.rounds.len(), 2);

        cfg.rounds = 1;
        let mut bad = ScriptedProposer::new(vec![vec!["(".into(), "Nope".into(), "".into()]]);
        let mut critic = ScriptedCritic::new(vec![]);
        let e = run_loop(&cfg, &data.view(), &Templates::default(), &mut bad, &mut critic, &scorer, None).unwrap_err();
        assert_eq!(e.error, BoxloopError::NoValidPrograms);
        assert_eq!(e.record.rounds[0].candidates.len(), 3);
    }
}

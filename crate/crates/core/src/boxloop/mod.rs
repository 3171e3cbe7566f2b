//! The propose / score / criticize search loop.
//!
//! Each round a proposer drafts `m` programs conditioned on the data, the
//! best `k` programs of the previous round and the critic's guidance; every
//! program is fitted and scored in isolation; the critic then summarizes
//! what worked. Everything that happens is captured in a [`RunRecord`],
//! which can be replayed offline.

pub mod agents;
pub mod config;
pub mod data;
pub mod lm;
pub mod render;
pub mod run;
pub mod scorer;

use serde::{Deserialize, Serialize};

pub use agents::{Critic, CriticContext, CriticReply, LmCritic, LmProposer, Proposal, ProposalContext, Proposer, ScriptedCritic, ScriptedProposer};
pub use config::{AgentKind, Backend, CriticPool, CriticVariant, LoopConfig, PRESETS};
pub use data::LoopData;
pub use lm::{ChatClient, HttpChat, Transcript};
pub use render::{DatasetView, Templates};
pub use run::{replay, run_loop, LoopFailure, LoopResult, ReplayMismatch, ReplayReport, RunDir, RECORD_SCHEMA_VERSION};
pub use scorer::{score_all, Failure, FailureKind, GpScorer, OdeScorer, PplScorer, PredictiveStats, Scored, Scorer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoxloopError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("io: {0}")]
    Io(String),
    #[error("proposer: {0}")]
    Proposer(String),
    #[error("no program was scored successfully in any round")]
    NoValidPrograms,
    #[error("record schema version {found}, expected {expected}")]
    Schema { found: u32, expected: u32 },
    #[error("data: {0}")]
    Data(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CandidateStatus {
    Proposed,
    FitOk,
    FitFailed(Failure),
}

/// One proposed program and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateProgram {
    pub backend: Backend,
    pub round: usize,
    pub index: usize,
    pub source: String,
    /// Seed used for fitting (replays reuse it).
    pub seed: u64,
    pub status: CandidateStatus,
    /// Present iff the status is `FitOk`.
    pub score: Option<f64>,
    pub stats: Option<PredictiveStats>,
    pub details: Option<serde_json::Value>,
}

impl CandidateProgram {
    pub fn is_ok(&self) -> bool {
        self.status == CandidateStatus::FitOk
    }

    pub fn failure(&self) -> Option<&Failure> {
        match &self.status {
            CandidateStatus::FitFailed(f) => Some(f),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum HypothesisEdit {
    Add { round: usize, id: String, text: String },
    Delete { round: usize, id: String },
}

/// Parses `add <ID>: <text>` / `delete <ID>` lines (also separated by
/// `;`) where IDs are letters followed by digits. Other lines are ignored.
pub fn parse_edits(text: &str, round: usize) -> Vec<HypothesisEdit> {
    let mut out = Vec::new();
    for item in text.split(['\n', ';']) {
        let item = item.trim().trim_start_matches(['-', '*', ' ']);
        let Some((verb, rest)) = item.split_once(char::is_whitespace) else { continue };
        let rest = rest.trim();
        let (id, body) = match rest.split_once(':') {
            Some((id, body)) => (id.trim(), body.trim()),
            None => match rest.split_once(char::is_whitespace) {
                Some((id, body)) => (id.trim(), body.trim()),
                None => (rest, ""),
            },
        };
        // IDs look like `H3`: letters then digits.
        let letters = id.trim_end_matches(|c: char| c.is_ascii_digit());
        if letters.is_empty() || letters.len() == id.len() || !letters.chars().all(|c| c.is_ascii_alphabetic()) {
            continue;
        }
        match verb.to_ascii_lowercase().as_str() {
            "add" => out.push(HypothesisEdit::Add { round, id: id.into(), text: body.into() }),
            "delete" | "remove" => out.push(HypothesisEdit::Delete { round, id: id.into() }),
            _ => {}
        }
    }
    out
}

/// The critic's natural-language guidance carried between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticismState {
    /// Round after which this state was produced.
    pub round: usize,
    pub variant: CriticVariant,
    /// Guidance shown to the proposer.
    pub text: String,
    /// (round, index) of the programs the critic saw.
    pub provenance: Vec<(usize, usize)>,
    /// State-space variant: the current hypothesis list.
    pub hypotheses: Vec<Hypothesis>,
    /// State-space variant: every edit applied so far.
    pub history: Vec<HypothesisEdit>,
    /// Set when the state was carried over unchanged (no valid fits, critic
    /// failure).
    pub note: Option<String>,
}

impl CriticismState {
    pub fn render_hypotheses(&self) -> String {
        self.hypotheses.iter().map(|h| format!("{}: {}\n", h.id, h.text)).collect()
    }

    /// Successor state built from a critic reply.
    pub fn next(previous: Option<&CriticismState>, variant: CriticVariant, round: usize, reply: &str, provenance: Vec<(usize, usize)>) -> Self {
        match variant {
            CriticVariant::TopD => Self {
                round,
                variant,
                text: reply.trim().to_string(),
                provenance,
                hypotheses: Vec::new(),
                history: Vec::new(),
                note: None,
            },
            CriticVariant::StateSpace => {
                let mut hyps = previous.map(|p| p.hypotheses.clone()).unwrap_or_default();
                let mut history = previous.map(|p| p.history.clone()).unwrap_or_default();
                for e in parse_edits(reply, round) {
                    match &e {
                        HypothesisEdit::Add { id, text, .. } => match hyps.iter_mut().find(|h| &h.id == id) {
                            Some(h) => h.text.clone_from(text),
                            None => hyps.push(Hypothesis { id: id.clone(), text: text.clone() }),
                        },
                        HypothesisEdit::Delete { id, .. } => hyps.retain(|h| &h.id != id),
                    }
                    history.push(e);
                }
                let mut s = Self { round, variant, text: String::new(), provenance, hypotheses: hyps, history, note: None };
                s.text = s.render_hypotheses();
                s
            }
        }
    }

    /// `previous` carried over with a note (or an empty state if none).
    pub fn carried(previous: Option<&CriticismState>, variant: CriticVariant, round: usize, note: String) -> Self {
        let mut s = previous.cloned().unwrap_or(Self {
            round,
            variant,
            text: String::new(),
            provenance: Vec::new(),
            hypotheses: Vec::new(),
            history: Vec::new(),
            note: None,
        });
        s.round = round;
        s.note = Some(note);
        s
    }
}

/// Everything that happened in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub candidates: Vec<CandidateProgram>,
    /// Indices (within this round) of the exemplars for the next round.
    pub exemplars: Vec<usize>,
    pub criticism: Option<CriticismState>,
    pub transcripts: Vec<Transcript>,
    pub success_rate: f64,
}

/// Append-only log of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub config: LoopConfig,
    pub template_version: u32,
    pub rounds: Vec<RoundRecord>,
    /// (round, index) of the best program.
    pub best: Option<(usize, usize)>,
}

impl RunRecord {
    pub fn candidates(&self) -> impl Iterator<Item = &CandidateProgram> {
        self.rounds.iter().flat_map(|r| &r.candidates)
    }

    pub fn candidate(&self, round: usize, index: usize) -> Option<&CandidateProgram> {
        self.rounds.get(round)?.candidates.get(index)
    }

    pub fn best_candidate(&self) -> Option<&CandidateProgram> {
        self.best.and_then(|(r, i)| self.candidate(r, i))
    }

    /// Successfully scored share of all proposals.
    pub fn success_rate(&self) -> f64 {
        let n = self.candidates().count();
        if n == 0 {
            0.0
        } else {
            self.candidates().filter(|c| c.is_ok()).count() as f64 / n as f64
        }
    }

    /// Best score up to and including each round (`None` until the first
    /// successful fit).
    pub fn running_max(&self) -> Vec<Option<f64>> {
        let mut best: Option<f64> = None;
        self.rounds
            .iter()
            .map(|r| {
                for s in r.candidates.iter().filter_map(|c| c.score) {
                    best = Some(best.map_or(s, |b| b.max(s)));
                }
                best
            })
            .collect()
    }
}

/// Argmax by score over successful candidates; ties go to the earliest.
pub fn best_of<'a>(candidates: impl IntoIterator<Item = &'a CandidateProgram>) -> Option<&'a CandidateProgram> {
    let mut best: Option<&CandidateProgram> = None;
    for c in candidates {
        if let Some(s) = c.score {
            if best.is_none_or(|b| s > b.score.expect("scored")) {
                best = Some(c);
            }
        }
    }
    best
}

/// The `k` best successful candidates, by score then index.
pub fn top_k(candidates: &[CandidateProgram], k: usize) -> Vec<usize> {
    let mut ok: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].score.is_some()).collect();
    ok.sort_by(|&a, &b| candidates[b].score.unwrap().total_cmp(&candidates[a].score.unwrap()).then(a.cmp(&b)));
    ok.truncate(k);
    ok
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(i: usize, score: Option<f64>) -> CandidateProgram {
        CandidateProgram {
            backend: Backend::Gp,
            round: 0,
            index: i,
            source: format!("p{i}"),
            seed: 0,
            status: if score.is_some() {
                CandidateStatus::FitOk
            } else {
                CandidateStatus::FitFailed(Failure::new(FailureKind::ParseError, "x"))
            },
            score,
            stats: None,
            details: None,
        }
    }

    #[test]
    fn exemplar_selection() {
        let c = vec![cand(0, Some(3.0)), cand(1, Some(1.0)), cand(2, Some(2.0))];
        assert_eq!(top_k(&c, 2), vec![0, 2]);
        let c = vec![cand(0, None), cand(1, Some(1.0)), cand(2, Some(1.0))];
        assert_eq!(top_k(&c, 3), vec![1, 2]);
        assert_eq!(best_of(&c).unwrap().index, 1);
    }

    #[test]
    fn hypothesis_edits() {
        let s1 = CriticismState::next(None, CriticVariant::StateSpace, 0, "add H1: trend\nadd H2: seasonality", vec![]);
        assert_eq!(s1.hypotheses.len(), 2);
        let s2 = CriticismState::next(Some(&s1), CriticVariant::StateSpace, 1, "delete H1; add H3", vec![]);
        let ids: Vec<&str> = s2.hypotheses.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["H2", "H3"]);
        assert_eq!(s2.history.len(), 4);
        assert_eq!(s2.text, "H2: seasonality\nH3: \n");
        // Free text is ignored.
        let s3 = CriticismState::next(Some(&s2), CriticVariant::StateSpace, 2, "Add more structure.\nI think so.", vec![]);
        assert_eq!(s3.hypotheses, s2.hypotheses);
    }
}

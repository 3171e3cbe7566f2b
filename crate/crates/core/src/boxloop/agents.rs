//! Proposers and critics: scripted test doubles and LM-backed agents.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::lm::{complete_with_retries, extract_last_code_block, ChatClient, ChatMessage, ChatRequest, Transcript};
use super::render::{self, DatasetView, Exemplar, Templates};
use super::scorer::{Failure, FailureKind};
use super::{BoxloopError, CandidateProgram, CriticismState, LoopConfig};

/// Everything a proposer may condition on in one round.
pub struct ProposalContext<'a> {
    pub round: usize,
    pub config: &'a LoopConfig,
    pub view: &'a DatasetView,
    pub templates: &'a Templates,
    pub exemplars: &'a [Exemplar],
    pub criticism: Option<&'a CriticismState>,
}

impl ProposalContext<'_> {
    pub fn messages(&self) -> Vec<ChatMessage> {
        render::proposal_messages(self.templates, self.config, self.view, self.exemplars, self.criticism)
    }
}

/// One proposal: its source, or why none could be extracted.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub source: Result<String, Failure>,
    pub transcript: Option<Transcript>,
}

pub trait Proposer {
    /// Returns exactly `config.proposals` proposals.
    fn propose(&mut self, ctx: &ProposalContext) -> Result<Vec<Proposal>, BoxloopError>;
}

/// Replays fixed programs per round, verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedProposer {
    pub rounds: Vec<Vec<String>>,
}

impl ScriptedProposer {
    pub fn new(rounds: Vec<Vec<String>>) -> Self {
        Self { rounds }
    }

    /// JSON fixture: `{"rounds": [["src", ...], ...]}`.
    pub fn from_json(text: &str) -> Result<Self, BoxloopError> {
        serde_json::from_str(text).map_err(|e| BoxloopError::Fixture(format!("proposer fixture: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, BoxloopError> {
        let text = std::fs::read_to_string(path).map_err(|e| BoxloopError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The first `m` entries of `round`.
    pub fn round(&self, round: usize, m: usize) -> Result<Vec<String>, BoxloopError> {
        let r = self.rounds.get(round).ok_or_else(|| {
            BoxloopError::Fixture(format!("proposer fixture exhausted: no round {round} ({} rounds)", self.rounds.len()))
        })?;
        if r.len() < m {
            return Err(BoxloopError::Fixture(format!("proposer fixture round {round} has {} programs, {m} needed", r.len())));
        }
        Ok(r[..m].to_vec())
    }
}

impl Proposer for ScriptedProposer {
    fn propose(&mut self, ctx: &ProposalContext) -> Result<Vec<Proposal>, BoxloopError> {
        Ok(self
            .round(ctx.round, ctx.config.proposals)?
            .into_iter()
            .map(|s| Proposal { source: Ok(s), transcript: None })
            .collect())
    }
}

/// Samples independent completions and keeps the last fenced code block of
/// each.
pub struct LmProposer {
    pub client: Arc<dyn ChatClient>,
    pub model: String,
    pub backoff: Duration,
}

impl Proposer for LmProposer {
    fn propose(&mut self, ctx: &ProposalContext) -> Result<Vec<Proposal>, BoxloopError> {
        let req = ChatRequest {
            model: self.model.clone(),
            messages: ctx.messages(),
            temperature: ctx.config.proposal_temperature,
            max_tokens: ctx.config.max_tokens,
        };
        let (client, backoff) = (&*self.client, self.backoff);
        let out = std::thread::scope(|s| {
            let handles: Vec<_> = (0..ctx.config.proposals)
                .map(|i| {
                    let req = &req;
                    s.spawn(move || {
                        let (r, attempts) = complete_with_retries(client, req, backoff);
                        let source = match &r {
                            Ok(text) => extract_last_code_block(text)
                                .ok_or_else(|| Failure::new(FailureKind::ParseError, "no fenced code block in response")),
                            Err(e) => Err(Failure::new(FailureKind::ParseError, format!("no_response: {e}"))),
                        };
                        let transcript = Transcript {
                            round: ctx.round,
                            index: Some(i),
                            request: req.clone(),
                            response: r.as_ref().ok().cloned(),
                            error: r.err().map(|e| e.to_string()),
                            attempts,
                        };
                        Proposal { source, transcript: Some(transcript) }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("proposal thread panicked")).collect()
        });
        Ok(out)
    }
}

/// Inputs of one criticism step.
pub struct CriticContext<'a> {
    pub round: usize,
    pub config: &'a LoopConfig,
    pub view: &'a DatasetView,
    pub templates: &'a Templates,
    pub programs: Vec<&'a CandidateProgram>,
    pub previous: Option<&'a CriticismState>,
}

impl CriticContext<'_> {
    pub fn messages(&self) -> Vec<ChatMessage> {
        render::critic_messages(self.templates, self.config, self.view, &self.programs, self.previous)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticReply {
    pub text: Result<String, String>,
    pub transcript: Option<Transcript>,
}

pub trait Critic {
    fn criticize(&mut self, ctx: &CriticContext) -> CriticReply;
}

/// Returns fixed texts, one per call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCritic {
    pub texts: Vec<String>,
    #[serde(skip)]
    calls: usize,
}

impl ScriptedCritic {
    pub fn new(texts: Vec<String>) -> Self {
        Self { texts, calls: 0 }
    }

    /// JSON fixture: `{"texts": ["...", ...]}`.
    pub fn from_json(text: &str) -> Result<Self, BoxloopError> {
        serde_json::from_str(text).map_err(|e| BoxloopError::Fixture(format!("critic fixture: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self, BoxloopError> {
        let text = std::fs::read_to_string(path).map_err(|e| BoxloopError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

impl Critic for ScriptedCritic {
    fn criticize(&mut self, _: &CriticContext) -> CriticReply {
        let text = self.texts.get(self.calls).cloned().ok_or_else(|| "critic fixture exhausted".to_string());
        self.calls += 1;
        CriticReply { text, transcript: None }
    }
}

pub struct LmCritic {
    pub client: Arc<dyn ChatClient>,
    pub model: String,
    pub backoff: Duration,
}

impl Critic for LmCritic {
    fn criticize(&mut self, ctx: &CriticContext) -> CriticReply {
        let req = ChatRequest {
            model: self.model.clone(),
            messages: ctx.messages(),
            temperature: ctx.config.critic_temperature,
            max_tokens: ctx.config.max_tokens,
        };
        let (r, attempts) = complete_with_retries(&*self.client, &req, self.backoff);
        let transcript = Transcript {
            round: ctx.round,
            index: None,
            request: req,
            response: r.as_ref().ok().cloned(),
            error: r.as_ref().err().map(|e| e.to_string()),
            attempts,
        };
        CriticReply { text: r.map_err(|e| e.to_string()), transcript: Some(transcript) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_rounds_are_verbatim() {
        let p = ScriptedProposer::from_json(r#"{"rounds": [["a", " b\n\tc ", "d"], ["e", "f", "g"]]}"#).unwrap();
        assert_eq!(p.round(0, 3).unwrap(), vec!["a", " b\n\tc ", "d"]);
        assert_eq!(p.round(1, 3).unwrap(), vec!["e", "f", "g"]);
        assert!(matches!(p.round(5, 3), Err(BoxloopError::Fixture(_))));
        assert!(p.round(0, 4).is_err());
    }

    #[test]
    fn scripted_critic_in_order() {
        let mut c = ScriptedCritic::new(vec!["one".into()]);
        let cfg = LoopConfig::default();
        let view = DatasetView { name: "d".into(), columns: vec![], description: None, train_rows: 0 };
        let t = Templates::default();
        let ctx = CriticContext { round: 0, config: &cfg, view: &view, templates: &t, programs: vec![], previous: None };
        assert_eq!(c.criticize(&ctx).text.unwrap(), "one");
        assert!(c.criticize(&ctx).text.is_err());
    }
}

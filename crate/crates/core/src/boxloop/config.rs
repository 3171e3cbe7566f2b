use serde::{Deserialize, Serialize};

use super::BoxloopError;
use crate::ode::lv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Gp,
    Ppl,
    Ode,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Gp => "gp",
            Backend::Ppl => "ppl",
            Backend::Ode => "ode",
        }
    }

    /// What the score measures (higher is better for all three).
    pub fn metric(self) -> &'static str {
        match self {
            Backend::Gp => "log marginal likelihood",
            Backend::Ppl => "elpd_loo",
            Backend::Ode => "negative train MSE",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = BoxloopError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gp" => Ok(Backend::Gp),
            "ppl" => Ok(Backend::Ppl),
            "ode" => Ok(Backend::Ode),
            _ => Err(BoxloopError::Config(format!("unknown backend `{s}` (expected gp, ppl or ode)"))),
        }
    }
}

/// How the critic revises its hypothesis summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticVariant {
    /// Rewrites the summary from the best programs.
    TopD,
    /// Keeps an explicit hypothesis list and edits it with add/delete
    /// instructions.
    StateSpace,
}

/// Which programs the critic sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticPool {
    /// The best `critic_pool_size` programs over all rounds so far.
    BestSoFar,
    /// The best `critic_pool_size` programs of the round just scored.
    RoundTop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Replays a fixture file.
    Scripted,
    /// Calls a chat-completions endpoint.
    Lm,
    /// No criticism (critic only).
    None,
}

/// Settings of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub preset: Option<String>,
    pub backend: Backend,
    /// Rounds T.
    pub rounds: usize,
    /// Proposals per round m.
    pub proposals: usize,
    /// In-context exemplars k.
    pub exemplars: usize,
    pub critic_pool: CriticPool,
    /// Programs shown to the critic (d).
    pub critic_pool_size: usize,
    pub critic_variant: CriticVariant,
    pub proposal_temperature: f64,
    pub critic_temperature: f64,
    /// GP backend: allow the augmented kernel set.
    pub augmented_kernels: bool,
    /// Seed program z0 shown in the first round.
    pub warm_start: Option<String>,
    /// Extra modeling instructions (natural-language constraints).
    pub instructions: Option<String>,
    /// Dataset reference (fixture name or path).
    pub dataset: String,
    /// Show real column names and the dataset description.
    pub metadata: bool,
    pub seed: u64,
    pub proposer: AgentKind,
    pub critic: AgentKind,
    /// Also criticize after the last round.
    pub criticize_last_round: bool,
    pub lm_endpoint: Option<String>,
    pub lm_model: Option<String>,
    /// Free-form label of the LM configuration, for reports.
    pub lm_name: Option<String>,
    pub max_tokens: usize,
    /// Wall-clock limit per fit.
    pub fit_timeout_secs: u64,
    /// Fits run at once (0 = one per available core).
    pub max_parallel: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            preset: None,
            backend: Backend::Gp,
            rounds: 3,
            proposals: 8,
            exemplars: 3,
            critic_pool: CriticPool::BestSoFar,
            critic_pool_size: 12,
            critic_variant: CriticVariant::TopD,
            proposal_temperature: 0.7,
            critic_temperature: 0.0,
            augmented_kernels: false,
            warm_start: None,
            instructions: None,
            dataset: String::new(),
            metadata: true,
            seed: 0,
            proposer: AgentKind::Lm,
            critic: AgentKind::Lm,
            criticize_last_round: false,
            lm_endpoint: None,
            lm_model: None,
            lm_name: None,
            max_tokens: 4096,
            fit_timeout_secs: 1800,
            max_parallel: 0,
        }
    }
}

/// Natural-language constraint of the constrained LV warm-start variant.
pub const LV_CONSTRAINT: &str = "The model must stay interpretable to an ecologist who suggested a Holling type II \
functional response. Use neural networks only to make interpretable quantities (rates, handling times) depend on the \
state, not as free additive corrections.";

/// Instruction shared by the LV warm-start variants.
pub const LV_HYBRID_INSTRUCTION: &str = "Propose hybrid neural ODE models that improve on the seed program.";

pub const PRESETS: [&str; 6] = ["gp_base", "gp_augmented", "ppl_default", "lv_no_ws", "lv_ws_constraint", "lv_ws_noconstraint"];

impl LoopConfig {
    /// Named presets of standard run settings.
    pub fn preset(name: &str) -> Result<Self, BoxloopError> {
        let base = Self { preset: Some(name.to_string()), ..Self::default() };
        let c = match name {
            "gp_base" => Self { backend: Backend::Gp, rounds: 2, proposals: 3, proposal_temperature: 0.2, ..base },
            "gp_augmented" => Self { backend: Backend::Gp, rounds: 3, proposals: 8, augmented_kernels: true, ..base },
            "ppl_default" => Self { backend: Backend::Ppl, rounds: 3, proposals: 8, ..base },
            "lv_no_ws" => Self {
                backend: Backend::Ode,
                rounds: 4,
                proposals: 12,
                warm_start: Some(lv::STANDARD_LV.to_string()),
                dataset: "lv_oscillating".into(),
                ..base
            },
            "lv_ws_constraint" | "lv_ws_noconstraint" => Self {
                backend: Backend::Ode,
                rounds: 4,
                proposals: 12,
                warm_start: Some(lv::WARM_START_ADDITIVE.to_string()),
                instructions: Some(if name == "lv_ws_constraint" {
                    format!("{LV_HYBRID_INSTRUCTION} {LV_CONSTRAINT}")
                } else {
                    LV_HYBRID_INSTRUCTION.to_string()
                }),
                dataset: "lv_oscillating".into(),
                ..base
            },
            _ => return Err(BoxloopError::Config(format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")))),
        };
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), BoxloopError> {
        let bad = |m: String| Err(BoxloopError::Config(m));
        if self.rounds == 0 || self.proposals == 0 {
            return bad("rounds and proposals must be at least 1".into());
        }
        if self.exemplars > self.proposals {
            return bad(format!("exemplars k = {} exceeds proposals m = {}", self.exemplars, self.proposals));
        }
        if self.critic_pool_size == 0 {
            return bad("critic_pool_size must be at least 1".into());
        }
        for (n, t) in [("proposal_temperature", self.proposal_temperature), ("critic_temperature", self.critic_temperature)] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("{n} = {t} outside [0, 2]"));
            }
        }
        if self.fit_timeout_secs == 0 {
            return bad("fit_timeout_secs must be positive".into());
        }
        Ok(())
    }

    pub fn parallelism(&self) -> usize {
        if self.max_parallel > 0 {
            self.max_parallel
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }
    }
}

//! Prompt templates and text rendering of datasets, programs and critiques.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lm::ChatMessage;
use super::{Backend, BoxloopError, CandidateProgram, CriticVariant, CriticismState, LoopConfig};
use crate::gp::KernelKind;
use crate::probprog::Family;
use crate::stats;

/// Bumped whenever a default template changes meaningfully.
pub const TEMPLATE_VERSION: u32 = 1;

/// Rows beyond this are elided from the data table (summaries still cover
/// every row).
pub const MAX_TABLE_ROWS: usize = 200;

/// Prompt templates. `{{name}}` placeholders are substituted verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    pub proposer: String,
    pub critic_top_d: String,
    pub critic_state_space: String,
    pub grammar_gp: String,
    pub grammar_ppl: String,
    pub grammar_ode: String,
}

const FILES: [&str; 6] =
    ["proposer.txt", "critic_top_d.txt", "critic_state_space.txt", "grammar_gp.txt", "grammar_ppl.txt", "grammar_ode.txt"];

impl Default for Templates {
    fn default() -> Self {
        Self {
            proposer: include_str!("../../templates/proposer.txt").into(),
            critic_top_d: include_str!("../../templates/critic_top_d.txt").into(),
            critic_state_space: include_str!("../../templates/critic_state_space.txt").into(),
            grammar_gp: include_str!("../../templates/grammar_gp.txt").into(),
            grammar_ppl: include_str!("../../templates/grammar_ppl.txt").into(),
            grammar_ode: include_str!("../../templates/grammar_ode.txt").into(),
        }
    }
}

impl Templates {
    /// Defaults overridden by any of the template files present in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, BoxloopError> {
        let mut t = Self::default();
        for (file, slot) in FILES.iter().zip([
            &mut t.proposer,
            &mut t.critic_top_d,
            &mut t.critic_state_space,
            &mut t.grammar_gp,
            &mut t.grammar_ppl,
            &mut t.grammar_ode,
        ]) {
            let p = dir.join(file);
            if p.exists() {
                *slot = std::fs::read_to_string(&p).map_err(|e| BoxloopError::Io(format!("{}: {e}", p.display())))?;
            }
        }
        Ok(t)
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter().fold(template.to_string(), |s, (k, v)| s.replace(&format!("{{{{{k}}}}}"), v))
}

/// The data as shown to the proposer and critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetView {
    pub name: String,
    pub columns: Vec<(String, Vec<f64>)>,
    pub description: Option<String>,
    /// Rows used for fitting; later rows are held out and never shown.
    pub train_rows: usize,
}

/// Compact decimal: at most 6 significant digits, no trailing zeros.
pub fn num(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == v.trunc() && v.abs() < 1e12 {
        return format!("{}", v as i64);
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn render_dataset(view: &DatasetView) -> String {
    let n = view.train_rows;
    let mut out = format!("Dataset `{}`: {} rows, {} columns.\n", view.name, n, view.columns.len());
    if let Some(d) = &view.description {
        let _ = writeln!(out, "Description: {}", d.trim());
    }
    out.push_str("\nSummary:\n");
    let mut rows = vec![vec!["column".to_string(), "min".into(), "max".into(), "mean".into(), "sd".into()]];
    for (name, col) in &view.columns {
        let c = &col[..n.min(col.len())];
        let (lo, hi) = stats::min_max(c);
        rows.push(vec![name.clone(), num(lo), num(hi), num(stats::mean(c)), num(stats::sd(c))]);
    }
    out.push_str(&aligned(&rows));
    out.push_str("\nData:\n");
    let shown = n.min(MAX_TABLE_ROWS);
    let mut table = vec![view.columns.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>()];
    for i in 0..shown {
        table.push(view.columns.iter().map(|(_, c)| num(c[i])).collect());
    }
    out.push_str(&aligned(&table));
    if shown < n {
        let _ = writeln!(out, "... ({} more rows)", n - shown);
    }
    out
}

/// Right-aligned columns separated by two spaces.
fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|j| rows.iter().filter_map(|r| r.get(j)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn grammar(t: &Templates, cfg: &LoopConfig, view: &DatasetView) -> String {
    match cfg.backend {
        Backend::Gp => {
            let set: &[KernelKind] = if cfg.augmented_kernels { &KernelKind::AUGMENTED } else { &KernelKind::BASE };
            fill(&t.grammar_gp, &[("kernels", &set.iter().map(|k| k.name()).collect::<Vec<_>>().join(", "))])
        }
        Backend::Ppl => {
            let dists: Vec<String> =
                Family::ALL.iter().map(|f| format!("{}({})", f.name(), f.arg_names().join(", "))).collect();
            let fns = "exp, log, sqrt, logistic, inv_logit, tanh, softplus, pow(a, b)";
            fill(&t.grammar_ppl, &[("distributions", &dists.join(", ")), ("functions", fns)])
        }
        Backend::Ode => {
            let states: Vec<&str> = view.columns.iter().map(|(n, _)| n.as_str()).filter(|n| *n != "t").collect();
            let fns = crate::ode::spec::FUNCTIONS
                .iter()
                .map(|(n, a)| if *a == 1 { n.to_string() } else { format!("{n}(a, b)") })
                .collect::<Vec<_>>()
                .join(", ");
            fill(&t.grammar_ode, &[("states", &states.join(", ")), ("functions", &fns)])
        }
    }
}

fn metric_goal(b: Backend) -> &'static str {
    match b {
        Backend::Gp => "Gaussian-process kernel",
        Backend::Ppl => "probabilistic",
        Backend::Ode => "dynamical",
    }
}

/// A scored program shown as an in-context example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub round: usize,
    pub index: usize,
    pub source: String,
    pub score: f64,
}

/// System and user messages for one proposal.
pub fn proposal_messages(
    t: &Templates,
    cfg: &LoopConfig,
    view: &DatasetView,
    exemplars: &[Exemplar],
    criticism: Option<&CriticismState>,
) -> Vec<ChatMessage> {
    let system = fill(
        &t.proposer,
        &[("grammar", &grammar(t, cfg, view)), ("metric", cfg.backend.metric()), ("metric_goal", metric_goal(cfg.backend))],
    );
    let mut user = render_dataset(view);
    if let Some(i) = &cfg.instructions {
        let _ = write!(user, "\nInstructions: {}\n", i.trim());
    }
    if let Some(z0) = &cfg.warm_start {
        let _ = write!(user, "\nStarting program:\n```\n{}\n```\n", z0.trim_end());
    }
    if !exemplars.is_empty() {
        user.push_str("\nBest programs from the previous round:\n");
        for e in exemplars {
            let _ = write!(user, "\nScore {}:\n```\n{}\n```\n", num(e.score), e.source.trim_end());
        }
    }
    if let Some(h) = criticism {
        let _ = write!(user, "\nGuidance from reviewing earlier programs:\n{}\n", h.text.trim());
    }
    user.push_str("\nPropose one new program.\n");
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

/// Text block describing a scored program for the critic. The statistics
/// are the scorer's summary serialized as JSON.
pub fn render_program(c: &CandidateProgram) -> String {
    let stats = c.stats.as_ref().map(|s| serde_json::to_string(s).expect("stats serialize")).unwrap_or_else(|| "null".into());
    format!(
        "Program r{}p{} (score {}):\n```\n{}\n```\nPredictive summary: {}\n",
        c.round,
        c.index,
        c.score.map(num).unwrap_or_else(|| "none".into()),
        c.source.trim_end(),
        stats
    )
}

pub fn critic_messages(
    t: &Templates,
    cfg: &LoopConfig,
    view: &DatasetView,
    programs: &[&CandidateProgram],
    previous: Option<&CriticismState>,
) -> Vec<ChatMessage> {
    let template = match cfg.critic_variant {
        CriticVariant::TopD => &t.critic_top_d,
        CriticVariant::StateSpace => &t.critic_state_space,
    };
    let system = fill(template, &[("metric", cfg.backend.metric())]);
    let mut user = render_dataset(view);
    if let Some(i) = &cfg.instructions {
        let _ = write!(user, "\nInstructions given to the modelers: {}\n", i.trim());
    }
    match (cfg.critic_variant, previous) {
        (CriticVariant::StateSpace, p) => {
            user.push_str("\nCurrent hypotheses:\n");
            let list = p.map(|p| p.render_hypotheses()).unwrap_or_default();
            user.push_str(if list.is_empty() { "(none)\n" } else { &list });
        }
        (CriticVariant::TopD, Some(p)) => {
            let _ = write!(user, "\nPrevious guidance:\n{}\n", p.text.trim());
        }
        (CriticVariant::TopD, None) => {}
    }
    user.push_str("\nPrograms:\n\n");
    for p in programs {
        user.push_str(&render_program(p));
        user.push('\n');
    }
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

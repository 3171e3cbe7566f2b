//! Run summaries. Every number is derived from the run record (plus, when
//! given, the reference program's score).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::IoError;
use crate::boxloop::{Backend, Failure, RunRecord, Scored};
use crate::inference::{self, Comparison};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub proposals: usize,
    pub succeeded: usize,
    pub best: Option<f64>,
    pub running_best: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestProgram {
    pub round: usize,
    pub index: usize,
    pub source: String,
    pub score: f64,
    /// Backend diagnostics (fitted parameters, convergence report, test error).
    pub details: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceResult {
    pub source: String,
    pub score: Option<f64>,
    pub failure: Option<Failure>,
    /// Best proposal (a) against the reference (b) by the 4 SE rule; only
    /// for pointwise-elpd backends.
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub backend: Backend,
    pub metric: String,
    pub dataset: String,
    pub proposals: usize,
    pub succeeded: usize,
    pub success_rate: f64,
    /// Failed proposals by kind.
    pub failures: BTreeMap<String, usize>,
    pub rounds: Vec<RoundSummary>,
    pub best: Option<BestProgram>,
    pub reference: Option<ReferenceResult>,
    pub plots: Vec<String>,
}

/// Pointwise elpd stored in a PPL candidate's details.
pub fn pointwise_elpd(details: &Value) -> Option<Vec<f64>> {
    details.pointer("/report/elpd_pointwise")?.as_array()?.iter().map(Value::as_f64).collect()
}

impl Report {
    pub fn build(record: &RunRecord, reference: Option<(&str, &Result<Scored, Failure>)>) -> Self {
        let running = record.running_max();
        let rounds = record
            .rounds
            .iter()
            .zip(&running)
            .map(|(r, rb)| RoundSummary {
                round: r.round,
                proposals: r.candidates.len(),
                succeeded: r.candidates.iter().filter(|c| c.is_ok()).count(),
                best: r.candidates.iter().filter_map(|c| c.score).reduce(f64::max),
                running_best: *rb,
            })
            .collect();
        let mut failures = BTreeMap::new();
        for f in record.candidates().filter_map(|c| c.failure()) {
            *failures.entry(f.kind.to_string()).or_insert(0) += 1;
        }
        let best = record.best_candidate().and_then(|c| {
            Some(BestProgram { round: c.round, index: c.index, source: c.source.clone(), score: c.score?, details: c.details.clone() })
        });
        let reference = reference.map(|(source, r)| {
            let comparison = match (record.config.backend, &best, r) {
                (Backend::Ppl, Some(b), Ok(s)) => {
                    let a = b.details.as_ref().and_then(pointwise_elpd);
                    a.zip(pointwise_elpd(&s.details)).and_then(|(a, b)| inference::compare(&a, &b).ok())
                }
                _ => None,
            };
            ReferenceResult {
                source: source.to_string(),
                score: r.as_ref().ok().map(|s| s.score),
                failure: r.as_ref().err().cloned(),
                comparison,
            }
        });
        let proposals = record.candidates().count();
        Self {
            run_id: record.run_id.clone(),
            backend: record.config.backend,
            metric: record.config.backend.metric().to_string(),
            dataset: record.config.dataset.clone(),
            proposals,
            succeeded: record.candidates().filter(|c| c.is_ok()).count(),
            success_rate: record.success_rate(),
            failures,
            rounds,
            best,
            reference,
            plots: Vec::new(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Run {}\n", self.run_id);
        let _ = writeln!(s, "- backend: {} (score: {})", self.backend.name(), self.metric);
        let _ = writeln!(s, "- dataset: {}", self.dataset);
        let _ = writeln!(s, "- proposals: {} scored of {} ({:.1}%)", self.succeeded, self.proposals, 100.0 * self.success_rate);
        for (kind, n) in &self.failures {
            let _ = writeln!(s, "- {kind}: {n}");
        }
        let _ = writeln!(s, "\n| round | proposals | scored | round best | best so far |\n|---|---|---|---|---|");
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        for r in &self.rounds {
            let _ = writeln!(s, "| {} | {} | {} | {} | {} |", r.round, r.proposals, r.succeeded, opt(r.best), opt(r.running_best));
        }
        match &self.best {
            Some(b) => {
                let _ = writeln!(s, "\n## Best program (round {}, #{}): {:.4}\n\n```\n{}\n```", b.round, b.index, b.score, b.source.trim_end());
                if let Some(d) = &b.details {
                    let _ = writeln!(s, "\n```json\n{}\n```", serde_json::to_string_pretty(d).unwrap_or_default());
                }
            }
            None => s.push_str("\nNo program was scored successfully.\n"),
        }
        if let Some(r) = &self.reference {
            let _ = writeln!(s, "\n## Reference program\n\n```\n{}\n```\n", r.source.trim_end());
            match (&r.score, &r.failure) {
                (Some(v), _) => {
                    let _ = writeln!(s, "- score: {v:.4}");
                }
                (_, Some(f)) => {
                    let _ = writeln!(s, "- failed: {}: {}", f.kind, f.message);
                }
                _ => {}
            }
            if let Some(c) = &r.comparison {
                let outcome = match c.verdict {
                    inference::Verdict::A => "best proposal is better",
                    inference::Verdict::B => "reference is better",
                    inference::Verdict::Tie => "no significant difference",
                };
                let _ = writeln!(s, "- difference {:.3} (se {:.3}): {} ({})", c.diff, c.se_diff, c.verdict, outcome);
            }
        }
        if !self.plots.is_empty() {
            s.push_str("\n## Figures\n\n");
            for p in &self.plots {
                let _ = writeln!(s, "- {p}");
            }
        }
        s
    }
}

/// An elpd estimate read from JSON: a score report (`elpd_loo`, `se`,
/// optional `elpd_pointwise`), a candidate's details (`{"report": ...}`),
/// or a bare `{"elpd": .., "se": ..}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElpdSummary {
    pub elpd: f64,
    pub se: f64,
    pub pointwise: Option<Vec<f64>>,
}

impl ElpdSummary {
    pub fn from_json(v: &Value) -> Result<Self, IoError> {
        let v = v.get("report").unwrap_or(v);
        let num = |keys: &[&str]| keys.iter().find_map(|k| v.get(*k).and_then(Value::as_f64));
        let elpd = num(&["elpd_loo", "elpd"]).ok_or_else(|| IoError::Data("no `elpd_loo` or `elpd` field".into()))?;
        let se = num(&["se"]).ok_or_else(|| IoError::Data("no `se` field".into()))?;
        let pointwise = v.get("elpd_pointwise").and_then(|p| p.as_array()?.iter().map(Value::as_f64).collect());
        Ok(Self { elpd, se, pointwise })
    }
}

/// Applies the 4 SE rule to `a - b`. With pointwise values for both on the
/// same observations the paired standard error is used; otherwise the two
/// standard errors are combined as if independent.
pub fn compare_summaries(a: &ElpdSummary, b: &ElpdSummary) -> Comparison {
    if let (Some(pa), Some(pb)) = (&a.pointwise, &b.pointwise) {
        if let Ok(c) = inference::compare(pa, pb) {
            return c;
        }
    }
    let diff = a.elpd - b.elpd;
    let se_diff = a.se.hypot(b.se);
    Comparison { diff, se_diff, verdict: inference::verdict(diff, se_diff) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Verdict;
    use serde_json::json;

    #[test]
    fn summary_comparison() {
        let a = ElpdSummary::from_json(&json!({"elpd": 7.0, "se": 2.0})).unwrap();
        let b = ElpdSummary::from_json(&json!({"elpd": 0.0, "se": 0.0})).unwrap();
        let c = compare_summaries(&a, &b);
        assert_eq!((c.diff, c.se_diff, c.verdict), (7.0, 2.0, Verdict::Tie));
        let b = ElpdSummary::from_json(&json!({"elpd_loo": -2.0, "se": 0.0})).unwrap();
        assert_eq!(compare_summaries(&a, &b).verdict, Verdict::A);
        assert_eq!(compare_summaries(&b, &a).verdict, Verdict::B);
        assert!(ElpdSummary::from_json(&json!({"se": 1.0})).is_err());
    }

    #[test]
    fn pointwise_values_are_paired() {
        let a = ElpdSummary::from_json(&json!({"report": {"elpd_loo": 3.0, "se": 9.0, "elpd_pointwise": [1.0, 1.0, 1.0]}})).unwrap();
        let b = ElpdSummary::from_json(&json!({"elpd_loo": 0.0, "se": 9.0, "elpd_pointwise": [0.0, 0.0, 0.0]})).unwrap();
        let c = compare_summaries(&a, &b);
        assert_eq!(c, inference::compare(&[1.0; 3], &[0.0; 3]).unwrap());
        assert_eq!(c.verdict, Verdict::A);
    }
}

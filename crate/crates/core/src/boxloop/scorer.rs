//! Backend scorers and failure-isolated parallel scoring.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::Backend;
use crate::gp::{self, FitOptions, KernelKind, TimeSeriesDataset};
use crate::inference::{self, SamplerConfig};
use crate::ode::model::Observations;
use crate::ode::{self, FitPlan, OdeDataset, OdeModel};
use crate::probprog::{self, CompiledModel, DataTable};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    ParseError,
    InferenceError,
    Timeout,
    DiagnosticsFailed,
}

impl std::fmt::Display for FailureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FailureKind::ParseError => "parse_error",
            FailureKind::InferenceError => "inference_error",
            FailureKind::Timeout => "timeout",
            FailureKind::DiagnosticsFailed => "diagnostics_failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: FailureKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    fn parse(e: impl std::fmt::Display) -> Self {
        Self::new(FailureKind::ParseError, e.to_string())
    }

    fn inference(e: impl std::fmt::Display) -> Self {
        Self::new(FailureKind::InferenceError, e.to_string())
    }
}

/// Predictive summary of one observed column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub mean: Vec<f64>,
    /// Absent for point predictions.
    pub var: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub mae: f64,
    pub rmse: f64,
    pub max_abs: f64,
}

impl Residuals {
    pub fn of(pred: &[f64], obs: &[f64]) -> Self {
        let r: Vec<f64> = pred.iter().zip(obs).map(|(p, o)| o - p).collect();
        let n = r.len().max(1) as f64;
        Self {
            mae: r.iter().map(|v| v.abs()).sum::<f64>() / n,
            rmse: (r.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
            max_abs: r.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}

/// Posterior-predictive (or fitted) summary passed to the critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveStats {
    pub columns: Vec<ColumnSummary>,
    /// Residuals on the training observations.
    pub residuals: Residuals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: f64,
    pub stats: PredictiveStats,
    /// Backend-specific report (fitted parameters, diagnostics, test error).
    pub details: serde_json::Value,
}

pub trait Scorer: Send + Sync {
    fn backend(&self) -> Backend;

    /// Fits and scores one program. Deterministic in (`source`, `seed`).
    fn score(&self, source: &str, seed: u64) -> Result<Scored, Failure>;
}

/// Scores GP kernel expressions by the log marginal likelihood of the
/// standardized training split.
pub struct GpScorer {
    pub data: TimeSeriesDataset,
    pub options: FitOptions,
    /// Base kernels a proposal may use.
    pub kernels: Vec<KernelKind>,
}

impl GpScorer {
    pub fn new(data: TimeSeriesDataset, augmented: bool) -> Self {
        let kernels = if augmented { KernelKind::AUGMENTED.to_vec() } else { KernelKind::BASE.to_vec() };
        Self { data, options: FitOptions::default(), kernels }
    }
}

impl Scorer for GpScorer {
    fn backend(&self) -> Backend {
        Backend::Gp
    }

    fn score(&self, source: &str, seed: u64) -> Result<Scored, Failure> {
        let expr = gp::parse_kernel(source.trim()).map_err(Failure::parse)?;
        if let Some(b) = expr.leaves().into_iter().find(|b| !self.kernels.contains(&b.kind)) {
            return Err(Failure::parse(format!("kernel `{}` is not in the allowed set", b.kind)));
        }
        let s = self.data.normalized();
        let opts = FitOptions { seed, ..self.options.clone() };
        let fit = gp::fit_gp(&expr, &s.x_train, &s.y_train, &opts).map_err(Failure::inference)?;
        let all_x: Vec<f64> = s.x_train.iter().chain(&s.x_test).copied().collect();
        let (mean, var) = gp::predict(&fit.model, &s.x_train, &s.y_train, &all_x).map_err(Failure::inference)?;
        let n = &s.normalizer;
        let mean: Vec<f64> = mean.iter().map(|m| n.y_inverse(*m)).collect();
        let var: Vec<f64> = var.iter().map(|v| v * n.y_sd * n.y_sd).collect();
        let split = self.data.split;
        let test_mae = (split < self.data.y.len()).then(|| gp::mae(&mean[split..], &self.data.y[split..]).ok()).flatten();
        Ok(Scored {
            score: finite(fit.log_marginal_likelihood)?,
            stats: PredictiveStats {
                residuals: Residuals::of(&mean[..split], &self.data.y[..split]),
                columns: vec![ColumnSummary { name: "y".into(), mean, var: Some(var) }],
            },
            details: json!({
                "kernel": fit.model.kernel.to_string(),
                "description": fit.model.kernel.describe(),
                "params": fit.model.params(),
                "noise_variance": fit.model.noise_variance(),
                "test_mae": test_mae,
            }),
        })
    }
}

/// Scores DSL programs by PSIS-LOO elpd; programs failing the convergence
/// gate are reported as `diagnostics_failed`.
pub struct PplScorer {
    pub table: DataTable,
    pub sampler: SamplerConfig,
    /// Posterior draws used for predictive summaries (thinned evenly).
    pub predictive_draws: usize,
}

/// Post-warmup draws per chain when scoring programs. With fewer, typical
/// hierarchical models sit right at the bulk-ESS gate.
pub const PPL_DRAWS: usize = 2000;

impl PplScorer {
    pub fn new(table: DataTable) -> Self {
        Self { table, sampler: Self::sampler(0), predictive_draws: 200 }
    }

    /// Sampler settings used for scoring, with the given seed.
    pub fn sampler(seed: u64) -> SamplerConfig {
        SamplerConfig { seed, draws: PPL_DRAWS, ..SamplerConfig::default() }
    }
}

impl Scorer for PplScorer {
    fn backend(&self) -> Backend {
        Backend::Ppl
    }

    fn score(&self, source: &str, seed: u64) -> Result<Scored, Failure> {
        let program = probprog::parse_model(source).map_err(Failure::parse)?;
        let model = CompiledModel::new(&program, &self.table).map_err(Failure::parse)?;
        let cfg = SamplerConfig { seed, ..self.sampler.clone() };
        let draws = inference::sample(&model, &cfg).map_err(Failure::inference)?;
        let report = inference::score_draws(&model, &draws).map_err(Failure::inference)?;
        if !report.passed {
            return Err(Failure::new(
                FailureKind::DiagnosticsFailed,
                format!(
                    "rhat_max {:?}, mean bulk ESS {:?}, {} divergent",
                    report.rhat_max, report.ess_mean, report.diverged
                ),
            ));
        }
        let pooled = draws.pooled();
        let stride = (pooled.len() / self.predictive_draws.max(1)).max(1);
        let thinned: Vec<Vec<f64>> = pooled.into_iter().step_by(stride).collect();
        let mut rng = rng_for(seed, &[0x99c]);
        let summaries = probprog::posterior_predictive(&model, &thinned, 1, &mut rng).map_err(Failure::inference)?;
        let (mut pred, mut obs) = (Vec::new(), Vec::new());
        for s in &summaries {
            if let Some(col) = self.table.column(&s.column) {
                pred.extend_from_slice(&s.mean);
                obs.extend_from_slice(col);
            }
        }
        Ok(Scored {
            score: finite(report.elpd_loo)?,
            stats: PredictiveStats {
                residuals: Residuals::of(&pred, &obs),
                columns: summaries
                    .into_iter()
                    .map(|s| ColumnSummary { name: s.column, mean: s.mean, var: Some(s.var) })
                    .collect(),
            },
            details: json!({
                "report": report,
                "posterior_means": draws.param_names.iter().map(|n| (n.clone(), draws.mean(n))).collect::<Vec<_>>(),
            }),
        })
    }
}

/// Fits ODE specs with the staged plan and scores them by negative train
/// MSE.
pub struct OdeScorer {
    pub data: OdeDataset,
    pub plan: FitPlan,
}

impl OdeScorer {
    pub fn new(data: OdeDataset) -> Self {
        Self { data, plan: FitPlan::two_stage(ode::fit::DEFAULT_ITERATIONS) }
    }
}

impl Scorer for OdeScorer {
    fn backend(&self) -> Backend {
        Backend::Ode
    }

    fn score(&self, source: &str, seed: u64) -> Result<Scored, Failure> {
        let model = OdeModel::parse(source).map_err(Failure::parse)?;
        if let Some(s) = model.spec().states.iter().find(|s| !self.data.names.contains(s)) {
            return Err(Failure::parse(format!("dataset has no column `{s}`")));
        }
        // Stages that train nothing (e.g. MLP stage of a purely mechanistic
        // spec) are dropped.
        let mut plan = self.plan.clone();
        plan.stages.retain(|st| match st.trainable {
            ode::Trainable::Mlps => !model.spec().mlps.is_empty(),
            ode::Trainable::Mechanistic => !model.spec().params.is_empty(),
            _ => true,
        });
        let fitted = ode::lv::fit_spec("proposal", source, &self.data, &plan, seed).map_err(Failure::inference)?;
        let traj = model.trajectory_for(&fitted.fit.params, &self.data, plan.h).map_err(Failure::inference)?;
        let obs = Observations::new(&model, &self.data, plan.h, self.data.t.len()).map_err(Failure::inference)?;
        let states = &model.spec().states;
        let mut columns: Vec<ColumnSummary> =
            states.iter().map(|s| ColumnSummary { name: s.clone(), mean: Vec::new(), var: None }).collect();
        let (mut pred, mut truth) = (Vec::new(), Vec::new());
        for (r, (idx, row)) in obs.rows.iter().enumerate() {
            let y = traj.y.get(*idx);
            for (j, c) in columns.iter_mut().enumerate() {
                c.mean.push(y.map_or(f64::NAN, |y| y[j]));
            }
            if let (Some(y), true) = (y, r < self.data.split) {
                pred.extend_from_slice(y);
                truth.extend_from_slice(row);
            }
        }
        Ok(Scored {
            score: finite(-fitted.fit.train_mse)?,
            stats: PredictiveStats { columns, residuals: Residuals::of(&pred, &truth) },
            details: json!({
                "param_names": model.spec().params.iter().map(|p| p.name.clone()).collect::<Vec<_>>(),
                "params": fitted.fit.params[..model.num_mechanistic()].to_vec(),
                "stage_losses": fitted.fit.stage_losses,
                "test_mae": fitted.test.mae,
                "test_truncated": fitted.test.truncated,
                "spec": fitted.spec,
            }),
        })
    }
}

fn finite(x: f64) -> Result<f64, Failure> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Failure::inference(format!("non-finite score {x}")))
    }
}

/// One job for [`score_all`]: a parsed-or-failed proposal and its seed.
pub struct Job {
    pub source: Result<String, Failure>,
    pub seed: u64,
}

/// Scores every job with isolation: parse errors, fit errors, panics and
/// timeouts become per-job failures. At most `parallel` fits run at once;
/// results come back in job order. A timed-out fit is abandoned (its thread
/// finishes in the background and its result is discarded).
pub fn score_all(scorer: &Arc<dyn Scorer>, jobs: Vec<Job>, timeout: Duration, parallel: usize) -> Vec<Result<Scored, Failure>> {
    let n = jobs.len();
    let mut out: Vec<Option<Result<Scored, Failure>>> = (0..n).map(|_| None).collect();
    let mut pending: Vec<(usize, String, u64)> = Vec::new();
    for (i, j) in jobs.into_iter().enumerate() {
        match j.source {
            Ok(src) => pending.push((i, src, j.seed)),
            Err(f) => out[i] = Some(Err(f)),
        }
    }
    for batch in pending.chunks(parallel.max(1)) {
        let (tx, rx) = mpsc::channel();
        for (i, src, seed) in batch.iter().cloned() {
            let (tx, scorer) = (tx.clone(), Arc::clone(scorer));
            std::thread::spawn(move || {
                let r = catch_unwind(AssertUnwindSafe(|| scorer.score(&src, seed)))
                    .unwrap_or_else(|p| Err(Failure::inference(format!("scorer panicked: {}", panic_message(&p)))));
                let _ = tx.send((i, r));
            });
        }
        drop(tx);
        let deadline = Instant::now() + timeout;
        let mut left = batch.len();
        while left > 0 {
            let wait = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(wait) {
                Ok((i, r)) => {
                    out[i] = Some(r);
                    left -= 1;
                }
                Err(_) => break,
            }
        }
        for (i, _, _) in batch {
            if out[*i].is_none() {
                out[*i] = Some(Err(Failure::new(FailureKind::Timeout, format!("fit exceeded {} s", timeout.as_secs_f64()))));
            }
        }
    }
    out.into_iter().map(|r| r.expect("every job resolved")).collect()
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Fraction of successfully scored proposals.
pub fn success_rate<T>(results: &[Result<T, Failure>]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.is_ok()).count() as f64 / results.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fake;

    impl Scorer for Fake {
        fn backend(&self) -> Backend {
            Backend::Gp
        }

        fn score(&self, source: &str, seed: u64) -> Result<Scored, Failure> {
            match source {
                "panic" => panic!("boom"),
                "sleep" => {
                    std::thread::sleep(Duration::from_secs(5));
                    Err(Failure::inference("late"))
                }
                s => {
                    let v: f64 = s.parse().map_err(Failure::parse)?;
                    Ok(Scored {
                        score: v + seed as f64,
                        stats: PredictiveStats { columns: vec![], residuals: Residuals::of(&[], &[]) },
                        details: json!(null),
                    })
                }
            }
        }
    }

    #[test]
    fn isolation_and_order() {
        let s: Arc<dyn Scorer> = Arc::new(Fake);
        let jobs = ["1", "x", "panic", "sleep", "2"]
            .iter()
            .map(|src| Job { source: Ok(src.to_string()), seed: 0 })
            .chain(std::iter::once(Job { source: Err(Failure::parse("no code block")), seed: 0 }))
            .collect();
        let r = score_all(&s, jobs, Duration::from_secs(1), 8);
        assert_eq!(r[0].as_ref().unwrap().score, 1.0);
        assert_eq!(r[1].as_ref().unwrap_err().kind, FailureKind::ParseError);
        assert!(r[2].as_ref().unwrap_err().message.contains("boom"));
        assert_eq!(r[3].as_ref().unwrap_err().kind, FailureKind::Timeout);
        assert_eq!(r[4].as_ref().unwrap().score, 2.0);
        assert_eq!(r[5].as_ref().unwrap_err().kind, FailureKind::ParseError);
        assert!((success_rate(&r) - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn gp_scorer_is_deterministic() {
        let data = crate::fixtures::time_series("air").unwrap();
        let mut s = GpScorer::new(data, false);
        s.options = FitOptions { restarts: 1, steps: 50, ..FitOptions::default() };
        let a = s.score("Linear + Periodic", 3).unwrap();
        let b = s.score("Linear + Periodic", 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stats.columns[0].mean.len(), 144);
        assert_eq!(s.score("Linear +", 3).unwrap_err().kind, FailureKind::ParseError);
        assert_eq!(s.score("Matern32", 3).unwrap_err().kind, FailureKind::ParseError);
    }

    #[test]
    fn ode_scorer_reports_negative_mse() {
        let data = crate::ode::LvPreset::oscillating().simulate(0).unwrap().data;
        let mut s = OdeScorer::new(data);
        s.plan = FitPlan::two_stage(20);
        let r = s.score(crate::ode::lv::STANDARD_LV, 0).unwrap();
        assert!(r.score < 0.0);
        assert_eq!(r.stats.columns.len(), 2);
        assert_eq!(r.stats.columns[0].mean.len(), 61);
        let bad = s.score("dx/dt = -x", 0).unwrap_err();
        assert_eq!(bad.kind, FailureKind::ParseError);
    }
}

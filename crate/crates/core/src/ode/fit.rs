//! Staged full-batch Adam training.

use serde::{Deserialize, Serialize};

use super::data::OdeDataset;
use super::model::{Observations, OdeModel};
use super::OdeError;
use crate::optim::Adam;

pub const DEFAULT_LR: f64 = 3e-3;
pub const DEFAULT_ITERATIONS: usize = 1500;
/// Integration step used unless a caller overrides it.
pub const DEFAULT_H: f64 = 0.01;
/// Consecutive blown-up iterations tolerated before a fit is abandoned.
pub const MAX_BLOWUPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    All,
    /// Scalar params only.
    Mechanistic,
    /// MLP weights only.
    Mlps,
    /// Named params and MLP slots.
    Named(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub trainable: Trainable,
    pub iterations: usize,
    pub lr: f64,
}

impl Stage {
    pub fn new(trainable: Trainable) -> Self {
        Self { trainable, iterations: DEFAULT_ITERATIONS, lr: DEFAULT_LR }
    }

    pub fn iterations(mut self, n: usize) -> Self {
        self.iterations = n;
        self
    }

    pub fn lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPlan {
    pub stages: Vec<Stage>,
    pub h: f64,
}

impl FitPlan {
    pub fn single(iterations: usize) -> Self {
        Self { stages: vec![Stage::new(Trainable::All).iterations(iterations)], h: DEFAULT_H }
    }

    /// Mechanistic params first, then the MLPs with the params frozen.
    pub fn two_stage(iterations: usize) -> Self {
        Self {
            stages: vec![
                Stage::new(Trainable::Mechanistic).iterations(iterations),
                Stage::new(Trainable::Mlps).iterations(iterations),
            ],
            h: DEFAULT_H,
        }
    }
}

/// Result of a staged fit. Each stage keeps its lowest-loss iterate, so
/// stage losses never increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    pub param_names: Vec<String>,
    /// Training loss per iteration, per stage.
    pub loss_curves: Vec<Vec<f64>>,
    /// Best training loss after each stage.
    pub stage_losses: Vec<f64>,
    pub train_mse: f64,
}

fn mask(model: &OdeModel, t: &Trainable) -> Result<Vec<bool>, OdeError> {
    Ok(match t {
        Trainable::All => vec![true; model.dim()],
        Trainable::Mechanistic => model.mechanistic_mask(),
        Trainable::Mlps => model.mlp_mask(),
        Trainable::Named(n) => model.mask_for(&n.iter().map(String::as_str).collect::<Vec<_>>())?,
    })
}

/// Fits from `init` (use [`OdeModel::initial_params`] for the declared
/// values). Parameters outside a stage's trainable set are never written.
pub fn fit_ode(model: &OdeModel, data: &OdeDataset, plan: &FitPlan, init: Vec<f64>) -> Result<FitResult, OdeError> {
    if plan.stages.is_empty() {
        return Err(OdeError::Invalid("fit plan has no stages".into()));
    }
    if init.len() != model.dim() {
        return Err(OdeError::Invalid(format!("expected {} initial values, got {}", model.dim(), init.len())));
    }
    let mut theta = init;
    let mut curves = Vec::new();
    let mut stage_losses = Vec::new();
    for (si, stage) in plan.stages.iter().enumerate() {
        let m = mask(model, &stage.trainable)?;
        let mut adam = Adam::new(model.dim(), stage.lr);
        let mut best = (model.loss(&theta, data, plan.h)?, theta.clone());
        let mut curve = Vec::with_capacity(stage.iterations);
        let (mut streak, mut halved) = (0, false);
        for _ in 0..stage.iterations {
            let lg = model.loss_grad(&theta, data, plan.h)?;
            if lg.blowup {
                streak += 1;
                if streak >= MAX_BLOWUPS {
                    return Err(OdeError::FitFailed(format!("stage {si}: integration blew up {MAX_BLOWUPS} times in a row")));
                }
                if !halved {
                    adam.lr *= 0.5;
                    halved = true;
                }
                // Retreat to the best iterate; the zero-gradient step below
                // only advances the optimizer's moments.
                theta.clone_from(&best.1);
                curve.push(f64::INFINITY);
                continue;
            }
            streak = 0;
            curve.push(lg.loss);
            if lg.loss < best.0 {
                best = (lg.loss, theta.clone());
            }
            adam.step_masked(&mut theta, &lg.grad, Some(&m));
        }
        let last = model.loss(&theta, data, plan.h)?;
        if last < best.0 {
            best = (last, theta.clone());
        }
        theta = best.1;
        stage_losses.push(best.0);
        curves.push(curve);
    }
    Ok(FitResult {
        train_mse: *stage_losses.last().unwrap(),
        params: theta,
        param_names: model.param_names(),
        loss_curves: curves,
        stage_losses,
    })
}

/// Held-out error of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestError {
    /// Mean absolute error over held-out rows and all states.
    pub mae: f64,
    pub points: usize,
    /// Integration stopped early; `mae` covers only the valid prefix.
    pub truncated: bool,
}

/// Integrates from the first row through the held-out rows and scores the
/// rows from `data.split` on.
pub fn test_mae(model: &OdeModel, params: &[f64], data: &OdeDataset, h: f64) -> Result<TestError, OdeError> {
    let obs = Observations::new(model, data, h, data.t.len())?;
    let traj = model.integrate(params, &obs.y0, obs.t0, h, obs.steps)?;
    let (mut total, mut count, mut points) = (0.0, 0usize, 0usize);
    for (idx, row) in &obs.rows[data.split.min(obs.rows.len())..] {
        let Some(y) = traj.y.get(*idx) else { break };
        total += y.iter().zip(row).map(|(a, b)| (a - b).abs()).sum::<f64>();
        count += row.len();
        points += 1;
    }
    let truncated = traj.blowup.is_some();
    let mae = if count == 0 { if truncated { f64::INFINITY } else { 0.0 } } else { total / count as f64 };
    Ok(TestError { mae, points, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay_data(theta: f64) -> OdeDataset {
        let m = OdeModel::parse("param theta = 1\ndb/dt = -theta * b").unwrap();
        let tr = m.integrate(&[theta], &[2.0], 0.0, 0.01, 300).unwrap();
        let idx: Vec<usize> = (0..=12).map(|k| k * 25).collect();
        OdeDataset::new("decay", idx.iter().map(|&i| tr.t[i]).collect(), vec!["b".into()], idx.iter().map(|&i| tr.y[i].clone()).collect())
            .unwrap()
            .with_train_end(2.0)
    }

    #[test]
    fn recovers_decay_rate() {
        let data = decay_data(1.3);
        let m = OdeModel::parse("param theta = 0.5\ndb/dt = -theta * b").unwrap();
        let plan = FitPlan { stages: vec![Stage::new(Trainable::All).iterations(1500).lr(0.01)], h: 0.01 };
        let r = fit_ode(&m, &data, &plan, m.initial_params(0)).unwrap();
        assert!((r.params[0] - 1.3).abs() < 0.013, "{:?}", r.params);
        let te = test_mae(&m, &r.params, &data, 0.01).unwrap();
        assert_eq!(te.points, 4);
        assert!(te.mae < 1e-3 && !te.truncated);
    }

    #[test]
    fn frozen_params_are_bit_identical() {
        let data = decay_data(1.3);
        let m = OdeModel::parse("param theta = 0.5\nparam k = 0.0\nmlp g(b) -> 1\ndb/dt = -theta * b + k + 0.1 * g").unwrap();
        let init = m.initial_params(1);
        let plan = FitPlan {
            stages: vec![
                Stage::new(Trainable::Mechanistic).iterations(50),
                Stage::new(Trainable::Mlps).iterations(50),
                Stage::new(Trainable::Named(vec!["k".into()])).iterations(20),
            ],
            h: 0.01,
        };
        let r = fit_ode(&m, &data, &plan, init.clone()).unwrap();
        // Stage 1 cannot touch MLP weights; stage 2 not theta or k; stage 3 only k.
        let one = fit_ode(&m, &data, &FitPlan { stages: plan.stages[..1].to_vec(), h: 0.01 }, init.clone()).unwrap();
        assert_eq!(one.params[2..], init[2..]);
        let two = fit_ode(&m, &data, &FitPlan { stages: plan.stages[..2].to_vec(), h: 0.01 }, init).unwrap();
        assert_eq!(two.params[..2], one.params[..2]);
        assert_eq!(r.params[0].to_bits(), two.params[0].to_bits());
        assert_eq!(r.params[2..], two.params[2..]);
        assert!(r.stage_losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn empty_plan_and_bad_init() {
        let data = decay_data(1.0);
        let m = OdeModel::parse("param theta = 0.5\ndb/dt = -theta * b").unwrap();
        assert!(fit_ode(&m, &data, &FitPlan { stages: vec![], h: 0.01 }, vec![0.5]).is_err());
        assert!(fit_ode(&m, &data, &FitPlan::single(1), vec![]).is_err());
    }

    #[test]
    fn persistent_blowup_fails() {
        let data = decay_data(1.0);
        let m = OdeModel::parse("param a = 50\ndb/dt = a * b * b").unwrap();
        let err = fit_ode(&m, &data, &FitPlan::single(30), vec![50.0]).unwrap_err();
        assert!(matches!(err, OdeError::FitFailed(_)));
    }
}

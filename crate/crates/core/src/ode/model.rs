//! Compiled ODE models: fixed-step RK4 integration and the exact gradient
//! of the discretized training loss (reverse sweep through every stage).

use serde::{Deserialize, Serialize};

use super::data::OdeDataset;
use super::mlp;
use super::spec::OdeSpec;
use super::OdeError;
use crate::autodiff::{Scratch, Tape};
use crate::rng::rng_for;

/// States larger than this (or non-finite) end the integration.
pub const BLOWUP: f64 = 1e6;

/// Integrated states on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    /// `[time][state]`.
    pub y: Vec<Vec<f64>>,
    /// Time at which integration stopped early, if it did.
    pub blowup: Option<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.y.last().expect("trajectory has the initial state")
    }
}

#[derive(Debug, Clone)]
struct Slot {
    sizes: Vec<usize>,
    w_off: usize,
    n_w: usize,
    out_off: usize,
    inputs: Vec<usize>,
    act_off: usize,
}

/// An [`OdeSpec`] compiled for repeated evaluation. The parameter vector
/// holds the scalar params in declaration order, then each MLP's weights.
#[derive(Debug, Clone)]
pub struct OdeModel {
    spec: OdeSpec,
    tape: Tape,
    slots: Vec<Slot>,
    n_states: usize,
    n_params: usize,
    n_out: usize,
    n_acts: usize,
    dim: usize,
}

/// Buffers reused across right-hand-side evaluations.
#[derive(Debug, Default)]
struct Workspace {
    scratch: Scratch,
    tape_in: Vec<f64>,
    acts: Vec<f64>,
    x: Vec<f64>,
    gx: Vec<f64>,
    adj: Vec<f64>,
    buf: Vec<f64>,
}

/// Training loss with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub blowup: bool,
}

impl OdeModel {
    pub fn new(spec: OdeSpec) -> Self {
        let n_states = spec.states.len();
        let n_params = spec.params.len();
        let mut slots = Vec::new();
        let (mut w_off, mut out_off, mut act_off) = (n_params, 0, 0);
        for m in &spec.mlps {
            let sizes = m.sizes();
            let n_w = mlp::num_weights(&sizes);
            let inputs = m.inputs.iter().map(|i| spec.states.iter().position(|s| s == i).expect("validated")).collect();
            let n_a = mlp::num_activations(&sizes);
            slots.push(Slot { sizes, w_off, n_w, out_off, inputs, act_off });
            w_off += n_w;
            out_off += m.outputs;
            act_off += n_a;
        }
        let tape = spec.compile();
        Self { tape, slots, n_states, n_params, n_out: out_off, n_acts: act_off, dim: w_off, spec }
    }

    pub fn parse(src: &str) -> Result<Self, OdeError> {
        Ok(Self::new(OdeSpec::parse(src)?))
    }

    pub fn spec(&self) -> &OdeSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_mechanistic(&self) -> usize {
        self.n_params
    }

    /// One name per parameter-vector entry (`alpha`, `h.w0`, ...).
    pub fn param_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self.spec.params.iter().map(|p| p.name.clone()).collect();
        for (m, s) in self.spec.mlps.iter().zip(&self.slots) {
            out.extend((0..s.n_w).map(|i| format!("{}.w{i}", m.name)));
        }
        out
    }

    /// Declared initial values, plus MLP weights drawn from the seed (output
    /// layers zero).
    pub fn initial_params(&self, seed: u64) -> Vec<f64> {
        let mut p: Vec<f64> = self.spec.params.iter().map(|q| q.init).collect();
        for (j, s) in self.slots.iter().enumerate() {
            p.extend(mlp::init_weights(&s.sizes, &mut rng_for(seed, &[0x0de, j as u64])));
        }
        p
    }

    /// Mask selecting entries by param or MLP name.
    pub fn mask_for(&self, names: &[&str]) -> Result<Vec<bool>, OdeError> {
        for n in names {
            if !self.spec.params.iter().any(|p| p.name == *n) && !self.spec.mlps.iter().any(|m| m.name == *n) {
                return Err(OdeError::Invalid(format!("no param or mlp named `{n}`")));
            }
        }
        let mut mask: Vec<bool> = self.spec.params.iter().map(|p| names.contains(&p.name.as_str())).collect();
        for (m, s) in self.spec.mlps.iter().zip(&self.slots) {
            mask.extend(std::iter::repeat_n(names.contains(&m.name.as_str()), s.n_w));
        }
        Ok(mask)
    }

    pub fn mechanistic_mask(&self) -> Vec<bool> {
        (0..self.dim).map(|i| i < self.n_params).collect()
    }

    pub fn mlp_mask(&self) -> Vec<bool> {
        (0..self.dim).map(|i| i >= self.n_params).collect()
    }

    fn tape_len(&self) -> usize {
        self.n_states + 1 + self.n_params + self.n_out
    }

    /// Right-hand side at (t, y). Leaves the tape inputs and MLP activations
    /// in the workspace. Returns false on a domain error.
    fn rhs(&self, t: f64, y: &[f64], theta: &[f64], ws: &mut Workspace, out: &mut [f64]) -> bool {
        let s = self.n_states;
        ws.tape_in.resize(self.tape_len(), 0.0);
        ws.acts.resize(self.n_acts, 0.0);
        ws.tape_in[..s].copy_from_slice(y);
        ws.tape_in[s] = t;
        ws.tape_in[s + 1..s + 1 + self.n_params].copy_from_slice(&theta[..self.n_params]);
        let base = s + 1 + self.n_params;
        for sl in &self.slots {
            ws.x.clear();
            ws.x.extend(sl.inputs.iter().map(|&i| y[i]));
            let nout = *sl.sizes.last().unwrap();
            let n_a = mlp::num_activations(&sl.sizes);
            mlp::forward(
                &sl.sizes,
                &theta[sl.w_off..sl.w_off + sl.n_w],
                &ws.x,
                &mut ws.acts[sl.act_off..sl.act_off + n_a],
                &mut ws.tape_in[base + sl.out_off..base + sl.out_off + nout],
            );
        }
        let err = self.tape.forward(&ws.tape_in, &mut ws.scratch);
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.tape.output_value(&ws.scratch, k);
        }
        err.is_none() && out.iter().all(|v| v.is_finite())
    }

    /// Evaluates dy/dt once (for inspection and tests).
    pub fn derivative(&self, t: f64, y: &[f64], theta: &[f64]) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.n_states];
        self.rhs(t, y, theta, &mut Workspace::default(), &mut out).then_some(out)
    }

    /// Adds `seed^T d f / d (y, theta)` at a recorded stage into `gy`, `gtheta`.
    fn vjp(&self, tape_in: &[f64], acts: &[f64], theta: &[f64], seed: &[f64], gy: &mut [f64], gtheta: &mut [f64], ws: &mut Workspace) {
        let s = self.n_states;
        ws.adj.clear();
        ws.adj.resize(self.tape_len(), 0.0);
        self.tape.vjp(tape_in, seed, &mut ws.scratch, &mut ws.adj);
        for i in 0..s {
            gy[i] += ws.adj[i];
        }
        for p in 0..self.n_params {
            gtheta[p] += ws.adj[s + 1 + p];
        }
        let base = s + 1 + self.n_params;
        for sl in &self.slots {
            let nout = *sl.sizes.last().unwrap();
            let g_out = &ws.adj[base + sl.out_off..base + sl.out_off + nout];
            if g_out.iter().all(|&g| g == 0.0) {
                continue;
            }
            ws.x.clear();
            ws.x.extend(sl.inputs.iter().map(|&i| tape_in[i]));
            ws.gx.clear();
            ws.gx.resize(sl.inputs.len(), 0.0);
            let n_a = mlp::num_activations(&sl.sizes);
            mlp::backward(
                &sl.sizes,
                &theta[sl.w_off..sl.w_off + sl.n_w],
                &ws.x,
                &acts[sl.act_off..sl.act_off + n_a],
                g_out,
                &mut gtheta[sl.w_off..sl.w_off + sl.n_w],
                &mut ws.gx,
                &mut ws.buf,
            );
            for (&i, g) in sl.inputs.iter().zip(&ws.gx) {
                gy[i] += g;
            }
        }
    }

    /// Classic RK4 with step `h` for `steps` steps from `y0` at `t0`.
    /// Stops early (and flags it) when a state leaves the finite range or
    /// exceeds [`BLOWUP`] in magnitude.
    pub fn integrate(&self, theta: &[f64], y0: &[f64], t0: f64, h: f64, steps: usize) -> Result<Trajectory, OdeError> {
        self.check(theta, y0, h)?;
        Ok(self.run(theta, y0, t0, h, steps, None))
    }

    fn check(&self, theta: &[f64], y0: &[f64], h: f64) -> Result<(), OdeError> {
        if theta.len() != self.dim {
            return Err(OdeError::Invalid(format!("expected {} parameters, got {}", self.dim, theta.len())));
        }
        if y0.len() != self.n_states || y0.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::Invalid("initial state must be finite and match the states".into()));
        }
        if !(h > 0.0) {
            return Err(OdeError::Invalid("step size must be positive".into()));
        }
        Ok(())
    }

    /// Integration loop; with `record`, stores every stage's tape inputs and
    /// activations for the reverse sweep.
    fn run(&self, theta: &[f64], y0: &[f64], t0: f64, h: f64, steps: usize, mut record: Option<&mut Record>) -> Trajectory {
        let s = self.n_states;
        let mut ws = Workspace::default();
        let mut traj = Trajectory { t: vec![t0], y: vec![y0.to_vec()], blowup: None };
        let mut k = [vec![0.0; s], vec![0.0; s], vec![0.0; s], vec![0.0; s]];
        let mut stage_y = vec![0.0; s];
        let mut y = y0.to_vec();
        for n in 0..steps {
            let t = t0 + n as f64 * h;
            let mut ok = true;
            for st in 0..4 {
                let (c, dt) = match st {
                    0 => (0.0, 0.0),
                    1 | 2 => (0.5 * h, 0.5 * h),
                    _ => (h, h),
                };
                for i in 0..s {
                    stage_y[i] = if st == 0 { y[i] } else { y[i] + c * k[st - 1][i] };
                }
                ok &= self.rhs(t + dt, &stage_y, theta, &mut ws, &mut k[st]);
                if let Some(r) = record.as_deref_mut() {
                    r.tape_in.extend_from_slice(&ws.tape_in);
                    r.acts.extend_from_slice(&ws.acts);
                }
                if !ok {
                    break;
                }
            }
            if ok {
                for i in 0..s {
                    y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
                }
                ok = y.iter().all(|v| v.is_finite() && v.abs() <= BLOWUP);
            }
            if !ok {
                traj.blowup = Some(t + h);
                break;
            }
            traj.t.push(t0 + (n + 1) as f64 * h);
            traj.y.push(y.clone());
        }
        traj
    }

    /// Mean squared error on the training rows of `data`, with its exact
    /// gradient. The first row is the initial condition.
    pub fn loss_grad(&self, theta: &[f64], data: &OdeDataset, h: f64) -> Result<LossGrad, OdeError> {
        let obs = Observations::new(self, data, h, data.split)?;
        self.check(theta, &obs.y0, h)?;
        let mut rec = Record::default();
        let traj = self.run(theta, &obs.y0, obs.t0, h, obs.steps, Some(&mut rec));
        if traj.blowup.is_some() {
            return Ok(LossGrad { loss: f64::INFINITY, grad: vec![0.0; self.dim], blowup: true });
        }
        let s = self.n_states;
        let scale = 1.0 / (obs.rows.len() * s) as f64;
        let mut loss = 0.0;
        // d loss / d y_n for every grid index with an observation.
        let mut obs_adj = vec![None::<Vec<f64>>; obs.steps + 1];
        for (idx, row) in &obs.rows {
            let e: Vec<f64> = traj.y[*idx].iter().zip(row).map(|(a, b)| a - b).collect();
            loss += e.iter().map(|v| v * v).sum::<f64>() * scale;
            let g = obs_adj[*idx].get_or_insert_with(|| vec![0.0; s]);
            for i in 0..s {
                g[i] += 2.0 * e[i] * scale;
            }
        }
        let mut grad = vec![0.0; self.dim];
        let mut lam = obs_adj[obs.steps].take().unwrap_or_else(|| vec![0.0; s]);
        let mut ws = Workspace::default();
        let tl = self.tape_len();
        let na = self.n_acts;
        let (mut dk, mut gstage) = (vec![0.0; s], vec![0.0; s]);
        for n in (0..obs.steps).rev() {
            let at = |st: usize| ((4 * n + st) * tl, (4 * n + st) * na);
            let mut a = lam.clone();
            // Stage 4: k4 = f(y + h k3).
            for i in 0..s {
                dk[i] = h / 6.0 * lam[i];
            }
            let weights = [h / 6.0, h / 3.0, h / 3.0];
            let coupling = [0.5 * h, 0.5 * h, h];
            for st in (0..4).rev() {
                let (ti, ai) = at(st);
                gstage.iter_mut().for_each(|g| *g = 0.0);
                self.vjp(&rec.tape_in[ti..ti + tl], &rec.acts[ai..ai + na], theta, &dk, &mut gstage, &mut grad, &mut ws);
                for i in 0..s {
                    a[i] += gstage[i];
                }
                if st > 0 {
                    for i in 0..s {
                        dk[i] = weights[st - 1] * lam[i] + coupling[st - 1] * gstage[i];
                    }
                }
            }
            if let Some(g) = obs_adj[n].take() {
                for i in 0..s {
                    a[i] += g[i];
                }
            }
            lam = a;
        }
        Ok(LossGrad { loss, grad, blowup: false })
    }

    /// Training loss only.
    pub fn loss(&self, theta: &[f64], data: &OdeDataset, h: f64) -> Result<f64, OdeError> {
        let obs = Observations::new(self, data, h, data.split)?;
        self.check(theta, &obs.y0, h)?;
        let traj = self.run(theta, &obs.y0, obs.t0, h, obs.steps, None);
        if traj.blowup.is_some() {
            return Ok(f64::INFINITY);
        }
        let s = self.n_states;
        let total: f64 =
            obs.rows.iter().map(|(idx, row)| traj.y[*idx].iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum();
        Ok(total / (obs.rows.len() * s) as f64)
    }

    /// Integrates over every row of `data` (train and test).
    pub fn trajectory_for(&self, theta: &[f64], data: &OdeDataset, h: f64) -> Result<Trajectory, OdeError> {
        let obs = Observations::new(self, data, h, data.t.len())?;
        self.integrate(theta, &obs.y0, obs.t0, h, obs.steps)
    }

    /// Reorders a dataset row to state order.
    pub fn state_row(&self, data: &OdeDataset, row: usize) -> Result<Vec<f64>, OdeError> {
        self.spec
            .states
            .iter()
            .map(|s| {
                let j = data.names.iter().position(|n| n == s).ok_or_else(|| OdeError::Data(format!("dataset has no column `{s}`")))?;
                Ok(data.y[row][j])
            })
            .collect()
    }
}

#[derive(Debug, Default)]
struct Record {
    tape_in: Vec<f64>,
    acts: Vec<f64>,
}

/// Observation rows mapped onto the integration grid.
pub(crate) struct Observations {
    pub t0: f64,
    pub y0: Vec<f64>,
    pub steps: usize,
    /// (grid index, observed states in state order).
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl Observations {
    pub fn new(model: &OdeModel, data: &OdeDataset, h: f64, upto: usize) -> Result<Self, OdeError> {
        if upto == 0 {
            return Err(OdeError::Data("no training rows".into()));
        }
        if data.names.len() != model.n_states {
            return Err(OdeError::Data(format!("dataset has {} columns, model has {} states", data.names.len(), model.n_states)));
        }
        let t0 = data.t[0];
        let mut rows = Vec::with_capacity(upto);
        for r in 0..upto {
            let steps = (data.t[r] - t0) / h;
            let idx = steps.round();
            if (steps - idx).abs() > 1e-6 {
                return Err(OdeError::Data(format!("time {} is not on the integration grid (h = {h})", data.t[r])));
            }
            rows.push((idx as usize, model.state_row(data, r)?));
        }
        let steps = rows.last().map_or(0, |r| r.0);
        Ok(Self { t0, y0: rows[0].1.clone(), steps, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> OdeModel {
        OdeModel::parse("param theta = 1\ndb/dt = -theta * b").unwrap()
    }

    #[test]
    fn exponential_decay() {
        let m = decay();
        let tr = m.integrate(&[1.0], &[1.0], 0.0, 0.01, 100).unwrap();
        assert!((tr.last()[0] - (-1.0f64).exp()).abs() < 1e-6);
        assert!((tr.t[100] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fourth_order_convergence() {
        let m = decay();
        let err = |h: f64| (m.integrate(&[1.0], &[1.0], 0.0, h, (1.0 / h).round() as usize).unwrap().last()[0] - (-1.0f64).exp()).abs();
        let ratio = err(0.1) / err(0.05);
        assert!((14.0..18.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn blowup_is_flagged() {
        let m = OdeModel::parse("db/dt = b * b").unwrap();
        let tr = m.integrate(&[], &[1.0], 0.0, 0.01, 200).unwrap();
        assert!(tr.blowup.is_some());
        assert!(tr.y.iter().all(|r| r[0].is_finite() && r[0] <= BLOWUP));
    }

    fn lv_data(model: &OdeModel, theta: &[f64], steps_per_obs: usize, rows: usize, h: f64) -> OdeDataset {
        let tr = model.integrate(theta, &[1.0, 0.8], 0.0, h, steps_per_obs * (rows - 1)).unwrap();
        let t: Vec<f64> = (0..rows).map(|r| tr.t[r * steps_per_obs]).collect();
        let y: Vec<Vec<f64>> = (0..rows).map(|r| tr.y[r * steps_per_obs].iter().map(|v| v + 0.05 * (r as f64).sin()).collect()).collect();
        OdeDataset::new("d", t, vec!["b".into(), "c".into()], y).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = OdeModel::parse(
            "param alpha = 0.9\nparam beta = 1.1\nparam gamma = 2.1\nparam delta = 1.2\nmlp h(b, c) -> 2 width 3\n\
             db/dt = alpha * b - beta * b * c + 0.1 * h[1]\ndc/dt = -gamma * c + delta * b * (c + 0.1 * h[2])",
        )
        .unwrap();
        let mut theta = m.initial_params(3);
        // Make the output layer nonzero so every weight has a gradient.
        for (i, v) in theta.iter_mut().enumerate().skip(4) {
            *v += 0.1 * ((i * 7) as f64).sin();
        }
        let h = 0.1;
        let data = lv_data(&m, &m.initial_params(0), 2, 6, h);
        let lg = m.loss_grad(&theta, &data, h).unwrap();
        assert!((lg.loss - m.loss(&theta, &data, h).unwrap()).abs() < 1e-14);
        for i in 0..theta.len() {
            let eps = 1e-6;
            let (mut a, mut b) = (theta.clone(), theta.clone());
            a[i] += eps;
            b[i] -= eps;
            let fd = (m.loss(&a, &data, h).unwrap() - m.loss(&b, &data, h).unwrap()) / (2.0 * eps);
            let g = lg.grad[i];
            assert!((fd - g).abs() <= 1e-3 * fd.abs().max(1e-6), "param {i}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn deterministic_and_masks() {
        let m = OdeModel::parse("param a = 1\nmlp g(b) -> 1\ndb/dt = -a * b + g").unwrap();
        let th = m.initial_params(9);
        assert_eq!(th, m.initial_params(9));
        let x = m.integrate(&th, &[1.0], 0.0, 0.01, 50).unwrap();
        assert_eq!(x, m.integrate(&th, &[1.0], 0.0, 0.01, 50).unwrap());
        assert_eq!(m.mask_for(&["a"]).unwrap(), m.mechanistic_mask());
        assert_eq!(m.mask_for(&["g"]).unwrap(), m.mlp_mask());
        assert!(m.mask_for(&["zz"]).is_err());
        assert_eq!(m.param_names()[1], "g.w0");
    }
}

//! Static-path HMC with a jittered number of leapfrog steps, dual-averaging
//! step-size adaptation and a diagonal metric estimated during warmup.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::rng::rng_for;

/// A differentiable log density on R^d.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad` and returns the log density. A
    /// non-finite return marks the point as outside the model's domain.
    fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl LogDensity for crate::probprog::CompiledModel {
    fn dim(&self) -> usize {
        crate::probprog::CompiledModel::dim(self)
    }

    fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let g = self.gradient(x);
        if !g.is_valid() {
            return f64::NAN;
        }
        grad.copy_from_slice(&g.values);
        g.value
    }
}

/// Log density given by a closure, for tests and custom targets.
pub struct FnDensity<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) -> f64 + Sync> LogDensity for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    /// Integration time targeted by the step count: L0 = ceil(path / eps).
    pub path_length: f64,
    /// Leapfrog steps are drawn uniformly from
    /// [max(1, floor(lo * L0)), ceil(hi * L0)].
    pub jitter: (f64, f64),
    pub max_leapfrog: usize,
    pub divergence_threshold: f64,
    pub init_tries: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            target_accept: 0.8,
            path_length: 1.0,
            jitter: (0.5, 1.5),
            max_leapfrog: 1024,
            divergence_threshold: 1000.0,
            init_tries: 10,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::InvalidConfig(m.to_string()));
        if self.chains < 2 {
            return bad("at least 2 chains are required for R-hat");
        }
        if self.draws < 100 {
            return bad("at least 100 draws per chain are required");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target acceptance must lie in (0, 1)");
        }
        if !(self.jitter.0 > 0.0 && self.jitter.0 <= self.jitter.1) || self.path_length <= 0.0 {
            return bad("path length and jitter range must be positive and ordered");
        }
        if self.max_leapfrog == 0 || self.init_tries == 0 {
            return bad("max_leapfrog and init_tries must be positive");
        }
        Ok(())
    }
}

/// Output of one chain, in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub divergent: Vec<bool>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub mean_accept: f64,
}

struct State {
    q: Vec<f64>,
    lp: f64,
    grad: Vec<f64>,
}

struct Transition {
    accept_prob: f64,
    divergent: bool,
}

fn kinetic(p: &[f64], inv_metric: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
}

/// Runs `steps` leapfrog steps from (q, p) in place. Returns false if the
/// log density became non-finite.
pub fn leapfrog<D: LogDensity + ?Sized>(
    target: &D,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    lp: &mut f64,
    eps: f64,
    inv_metric: &[f64],
    steps: usize,
) -> bool {
    for _ in 0..steps {
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * eps * gi;
        }
        for ((qi, pi), mi) in q.iter_mut().zip(p.iter()).zip(inv_metric) {
            *qi += eps * mi * pi;
        }
        *lp = target.log_density_gradient(q, grad);
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return false;
        }
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi += 0.5 * eps * gi;
        }
    }
    true
}

/// Hamiltonian (negative log density plus kinetic energy).
pub fn hamiltonian(lp: f64, p: &[f64], inv_metric: &[f64]) -> f64 {
    -lp + kinetic(p, inv_metric)
}

struct Chain<'a, D: ?Sized, R> {
    target: &'a D,
    cfg: &'a SamplerConfig,
    rng: R,
    inv_metric: Vec<f64>,
}

impl<D: LogDensity + ?Sized, R: Rng> Chain<'_, D, R> {
    fn momentum(&mut self) -> Vec<f64> {
        let rng = &mut self.rng;
        self.inv_metric.iter().map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt()).collect()
    }

    fn transition(&mut self, s: &mut State, eps: f64, steps: usize) -> Transition {
        let mut p = self.momentum();
        let h0 = hamiltonian(s.lp, &p, &self.inv_metric);
        let mut q = s.q.clone();
        let mut grad = s.grad.clone();
        let mut lp = s.lp;
        let ok = leapfrog(self.target, &mut q, &mut p, &mut grad, &mut lp, eps, &self.inv_metric, steps);
        let h1 = if ok { hamiltonian(lp, &p, &self.inv_metric) } else { f64::INFINITY };
        let divergent = !ok || h1 - h0 > self.cfg.divergence_threshold;
        let accept_prob = if h1.is_finite() { (h0 - h1).exp().min(1.0) } else { 0.0 };
        if self.rng.random::<f64>() < accept_prob {
            *s = State { q, lp, grad };
        }
        Transition { accept_prob, divergent }
    }

    fn steps_for(&mut self, eps: f64) -> usize {
        let l0 = (self.cfg.path_length / eps).ceil().clamp(1.0, self.cfg.max_leapfrog as f64);
        let lo = ((self.cfg.jitter.0 * l0).floor() as usize).max(1);
        let hi = ((self.cfg.jitter.1 * l0).ceil() as usize).clamp(lo, self.cfg.max_leapfrog);
        self.rng.random_range(lo..=hi)
    }

    /// Doubles or halves a step size until a single leapfrog step's
    /// acceptance probability crosses 1/2.
    fn initial_step_size(&mut self, s: &State) -> f64 {
        let mut eps: f64 = 1.0;
        let mut dir = 0.0;
        for _ in 0..60 {
            let mut p = self.momentum();
            let h0 = hamiltonian(s.lp, &p, &self.inv_metric);
            let (mut q, mut g, mut lp) = (s.q.clone(), s.grad.clone(), s.lp);
            let ok = leapfrog(self.target, &mut q, &mut p, &mut g, &mut lp, eps, &self.inv_metric, 1);
            let delta = if ok { h0 - hamiltonian(lp, &p, &self.inv_metric) } else { f64::NEG_INFINITY };
            let up = delta > (0.5f64).ln();
            let d = if up { 1.0 } else { -1.0 };
            if dir != 0.0 && d != dir {
                break;
            }
            dir = d;
            eps *= if up { 2.0 } else { 0.5 };
            if !(1e-10..=1e3).contains(&eps) {
                break;
            }
        }
        eps.clamp(1e-10, 1e3)
    }
}

/// Nesterov dual averaging on log step size.
struct DualAveraging {
    mu: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), h_bar: 0.0, log_eps: eps.ln(), log_eps_bar: 0.0, t: 0.0, target }
    }

    fn update(&mut self, accept: f64) -> f64 {
        self.t += 1.0;
        let eta = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept);
        self.log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let w = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
        self.log_eps.exp()
    }

    fn final_eps(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Regularized sample variance per coordinate (shrunk toward 1e-3).
fn metric_from(samples: &[Vec<f64>], d: usize) -> Vec<f64> {
    let n = samples.len() as f64;
    (0..d)
        .map(|j| {
            let m = samples.iter().map(|s| s[j]).sum::<f64>() / n;
            let v = samples.iter().map(|s| (s[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
            (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0))
        })
        .collect()
}

fn initialize<D: LogDensity + ?Sized, R: Rng>(
    target: &D,
    rng: &mut R,
    tries: usize,
    chain: usize,
) -> Result<State, InferenceError> {
    let d = target.dim();
    for _ in 0..tries {
        let q: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mut grad = vec![0.0; d];
        let lp = target.log_density_gradient(&q, &mut grad);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(State { q, lp, grad });
        }
    }
    Err(InferenceError::InitFailed { chain, tries })
}

/// Runs one chain with its own RNG stream (derived from the master seed and
/// the chain index).
pub fn run_chain<D: LogDensity + ?Sized>(
    target: &D,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput, InferenceError> {
    let d = target.dim();
    let mut rng = rng_for(cfg.seed, &[0xc4a1, chain as u64]);
    let mut state = initialize(target, &mut rng, cfg.init_tries, chain)?;
    let mut ch = Chain { target, cfg, rng, inv_metric: vec![1.0; d] };

    // Warmup: a fast step-size phase, two metric windows (the second is the
    // second half of warmup) and a final step-size phase.
    let w = cfg.warmup;
    let adapt_metric = w >= 40;
    let (b1, b2, b3) = ((w * 15) / 100, w / 2, w - w / 10);
    let mut eps = ch.initial_step_size(&state);
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let mut window: Vec<Vec<f64>> = Vec::new();
    for it in 0..w {
        let steps = ch.steps_for(eps);
        let t = ch.transition(&mut state, eps, steps);
        eps = da.update(t.accept_prob);
        if !adapt_metric {
            continue;
        }
        if it >= b1 && it < b3 {
            window.push(state.q.clone());
        }
        if it + 1 == b2 || it + 1 == b3 {
            if window.len() >= 10 {
                ch.inv_metric = metric_from(&window, d);
            }
            window.clear();
            eps = ch.initial_step_size(&state);
            da = DualAveraging::new(eps, cfg.target_accept);
        }
    }
    if w > 0 {
        eps = da.final_eps();
    }
    if !eps.is_finite() || eps <= 0.0 {
        eps = 1e-3;
    }

    let mut draws = Vec::with_capacity(cfg.draws);
    let mut divergent = Vec::with_capacity(cfg.draws);
    let mut acc = 0.0;
    for _ in 0..cfg.draws {
        let steps = ch.steps_for(eps);
        let t = ch.transition(&mut state, eps, steps);
        acc += t.accept_prob;
        draws.push(state.q.clone());
        divergent.push(t.divergent);
    }
    if cfg.draws > 0 && divergent.iter().all(|&x| x) {
        return Err(InferenceError::AllDivergent { chain });
    }
    Ok(ChainOutput {
        draws,
        divergent,
        step_size: eps,
        inv_metric: ch.inv_metric,
        mean_accept: acc / cfg.draws.max(1) as f64,
    })
}

/// Runs all chains concurrently; results are ordered by chain index.
pub fn hmc<D: LogDensity + ?Sized>(target: &D, cfg: &SamplerConfig) -> Result<Vec<ChainOutput>, InferenceError> {
    cfg.validate()?;
    let results: Vec<Result<ChainOutput, InferenceError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.chains).map(|c| scope.spawn(move || run_chain(target, cfg, c))).collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal() -> FnDensity<impl Fn(&[f64], &mut [f64]) -> f64 + Sync> {
        FnDensity {
            dim: 1,
            f: |x: &[f64], g: &mut [f64]| {
                g[0] = -x[0];
                -0.5 * x[0] * x[0]
            },
        }
    }

    #[test]
    fn leapfrog_conserves_energy_for_small_steps() {
        let t = std_normal();
        let (mut q, mut p, mut g) = (vec![0.7], vec![-0.4], vec![-0.7]);
        let mut lp = -0.5 * 0.49;
        let h0 = hamiltonian(lp, &p, &[1.0]);
        assert!(leapfrog(&t, &mut q, &mut p, &mut g, &mut lp, 1e-4, &[1.0], 10));
        assert!((hamiltonian(lp, &p, &[1.0]) - h0).abs() < 1e-6);
    }

    #[test]
    fn standard_normal_moments() {
        let cfg = SamplerConfig { seed: 11, ..Default::default() };
        let out = hmc(&std_normal(), &cfg).unwrap();
        let xs: Vec<f64> = out.iter().flat_map(|c| c.draws.iter().map(|d| d[0])).collect();
        let m = crate::stats::mean(&xs);
        let v = crate::stats::variance(&xs);
        assert!(m.abs() < 0.1, "{m}");
        assert!((v - 1.0).abs() < 0.15, "{v}");
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SamplerConfig { warmup: 200, draws: 100, seed: 5, ..Default::default() };
        let a = hmc(&std_normal(), &cfg).unwrap();
        let b = hmc(&std_normal(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig { chains: 1, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { draws: 50, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig::default().validate().is_ok());
    }

    #[test]
    fn init_failure_is_reported() {
        let t = FnDensity { dim: 2, f: |_: &[f64], _: &mut [f64]| f64::NAN };
        assert!(matches!(run_chain(&t, &SamplerConfig::default(), 0), Err(InferenceError::InitFailed { .. })));
    }
}

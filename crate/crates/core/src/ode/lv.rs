//! Perturbed Lotka–Volterra data and the three reference models.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::OdeDataset;
use super::fit::{fit_ode, test_mae, FitPlan, FitResult, Stage, TestError, Trainable, DEFAULT_H};
use super::model::OdeModel;
use super::OdeError;
use crate::rng::rng_for;

/// db/dt = αb − βbc,  dc/dt = −γc + δ·b·c^exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LvParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub exponent: f64,
}

/// Floor applied to the predator state before the fractional power.
pub const C_FLOOR: f64 = 1e-8;

impl LvParams {
    pub fn standard(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Self {
        Self { alpha, beta, gamma, delta, exponent: 1.0 }
    }

    /// Derivative; the bool reports whether the predator floor was hit.
    pub fn rhs(&self, y: [f64; 2]) -> ([f64; 2], bool) {
        let [b, c] = y;
        let clamped = c <= C_FLOOR && self.exponent != 1.0;
        let cp = if self.exponent == 1.0 { c } else { c.max(C_FLOOR).powf(self.exponent) };
        ([self.alpha * b - self.beta * b * c, -self.gamma * c + self.delta * b * cp], clamped)
    }
}

/// Simulation settings for an LV benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LvPreset {
    pub name: String,
    pub params: LvParams,
    pub y0: [f64; 2],
    pub train_end: f64,
    pub t_end: f64,
    pub dt_obs: f64,
    pub noise_sd: f64,
    pub h: f64,
}

impl LvPreset {
    /// δ = −1.2: predators decay to the floor without cycling.
    pub fn decaying() -> Self {
        Self {
            name: "lv_decaying".into(),
            params: LvParams { alpha: 0.9, beta: 1.1, gamma: 2.1, delta: -1.2, exponent: 0.95 },
            y0: [1.0, 1.0],
            train_end: 10.0,
            t_end: 15.0,
            dt_obs: 0.25,
            noise_sd: 0.05,
            h: DEFAULT_H,
        }
    }

    /// Same with δ = +1.2, which gives sustained predator–prey cycles.
    pub fn oscillating() -> Self {
        let mut p = Self::decaying();
        p.name = "lv_oscillating".into();
        p.params.delta = 1.2;
        p
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "lv_decaying" => Some(Self::decaying()),
            "lv_oscillating" => Some(Self::oscillating()),
            _ => None,
        }
    }

    pub fn simulate(&self, seed: u64) -> Result<Simulated, OdeError> {
        simulate_perturbed_lv(&self.params, self.y0, self.dt_obs, self.t_end, self.h, self.noise_sd, seed)
            .map(|s| Simulated { data: s.data.with_train_end(self.train_end), ..s })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: OdeDataset,
    /// Number of RK4 stages at which the predator floor was applied.
    pub clamp_events: usize,
}

/// Integrates the perturbed system with RK4 (step `h`) and records the
/// states every `dt_obs` up to `t_end`, plus iid Normal(0, noise_sd²) noise.
pub fn simulate_perturbed_lv(
    p: &LvParams,
    y0: [f64; 2],
    dt_obs: f64,
    t_end: f64,
    h: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Simulated, OdeError> {
    if y0.iter().any(|v| !(*v > 0.0)) {
        return Err(OdeError::Invalid("initial populations must be positive".into()));
    }
    let per_obs = dt_obs / h;
    if !(h > 0.0) || (per_obs - per_obs.round()).abs() > 1e-9 || per_obs < 1.0 {
        return Err(OdeError::Invalid("dt_obs must be a positive multiple of h".into()));
    }
    let per_obs = per_obs.round() as usize;
    let rows = (t_end / dt_obs + 1e-9).floor() as usize + 1;
    let mut rng = rng_for(seed, &[0x17]);
    let mut y = y0;
    let mut clamps = 0;
    let (mut ts, mut ys) = (Vec::with_capacity(rows), Vec::with_capacity(rows));
    for r in 0..rows {
        if r > 0 {
            for _ in 0..per_obs {
                let mut f = |y: [f64; 2]| {
                    let (d, c) = p.rhs(y);
                    clamps += c as usize;
                    d
                };
                let k1 = f(y);
                let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
                let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
                let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
                for i in 0..2 {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::Invalid(format!("simulation diverged at t = {}", r as f64 * dt_obs)));
        }
        ts.push(r as f64 * dt_obs);
        let noisy: Vec<f64> = if noise_sd > 0.0 {
            y.iter().map(|v| v + noise_sd * rng.sample::<f64, _>(StandardNormal)).collect()
        } else {
            y.to_vec()
        };
        ys.push(noisy);
    }
    Ok(Simulated { data: OdeDataset::new("lv", ts, vec!["b".into(), "c".into()], ys)?, clamp_events: clamps })
}

pub const STANDARD_LV: &str = "\
param alpha = 1
param beta = 1
param gamma = 1
param delta = 1
db/dt = alpha * b - beta * b * c
dc/dt = -gamma * c + delta * b * c
";

/// Multiplicative correction of the interaction term in the predator
/// equation.
pub const HYBRID_MULTIPLICATIVE: &str = "\
param alpha = 1
param beta = 1
param gamma = 1
param delta = 1
mlp h(b, c) -> 1
db/dt = alpha * b - beta * b * c
dc/dt = -gamma * c + delta * b * (c + 0.1 * h)
";

/// Additive prey correction used as the warm-start program.
pub const WARM_START_ADDITIVE: &str = "\
param alpha = 1
param beta = 1
param gamma = 1
param delta = 1
mlp h(b, c) -> 1
db/dt = alpha * b - beta * b * c + 0.1 * h
dc/dt = -gamma * c + delta * b * c
";

/// Carrying capacity, saturating predation and predator self-limitation.
pub const NO_WS_EXAMPLE: &str = "\
param alpha = 1
param beta = 1
param gamma = 1
param delta = 1
param kappa = 10
param psi = 0.1
param epsilon = 0.01
db/dt = alpha * b * (1 - b / kappa) - beta * b * c / (1 + psi * b)
dc/dt = -gamma * c + delta * b * c - epsilon * c ^ 2
";

/// Holling type II response with a prey-dependent handling time.
pub const HOLLING_CONSTRAINED: &str = "\
param alpha = 1
param beta = 1
param gamma = 1
param delta = 1
mlp handling(b) -> 1
db/dt = alpha * b - beta * b * c / (1 + handling * b)
dc/dt = -gamma * c + delta * b * c / (1 + handling * b)
";

/// Bundled specs by name.
pub const NAMED_SPECS: [(&str, &str); 5] = [
    ("standard_lv", STANDARD_LV),
    ("hybrid_multiplicative", HYBRID_MULTIPLICATIVE),
    ("warm_start_additive", WARM_START_ADDITIVE),
    ("no_ws_example", NO_WS_EXAMPLE),
    ("holling_constrained", HOLLING_CONSTRAINED),
];

pub fn named_spec(name: &str) -> Option<&'static str> {
    NAMED_SPECS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn neural_ode_spec(width: usize, depth: usize) -> String {
    format!("mlp f(b, c) -> 2 width {width} depth {depth}\ndb/dt = f[1]\ndc/dt = f[2]\n")
}

/// Neural-ODE search grid.
pub const NEURAL_WIDTHS: [usize; 4] = [4, 8, 16, 32];
pub const NEURAL_DEPTHS: [usize; 3] = [1, 2, 4];

/// Initial (α, β, γ, δ) by regressing finite-difference log growth rates
/// on the other population: d log b/dt = α − βc, d log c/dt = −γ + δb.
/// Falls back to ones where the data do not allow it.
pub fn gradient_matching_init(data: &OdeDataset) -> [f64; 4] {
    let (Some(b), Some(c)) = (data.column("b"), data.column("c")) else { return [1.0; 4] };
    let n = data.split.min(b.len());
    if n < 4 || b[..n].iter().chain(&c[..n]).any(|v| *v <= 0.0) {
        return [1.0; 4];
    }
    let mut rows = Vec::new();
    for i in 1..n - 1 {
        let dt = data.t[i + 1] - data.t[i - 1];
        rows.push(((b[i + 1].ln() - b[i - 1].ln()) / dt, (c[i + 1].ln() - c[i - 1].ln()) / dt, b[i], c[i]));
    }
    // Least squares y = a + s x.
    let fit = |pairs: Vec<(f64, f64)>| {
        let m = pairs.len() as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let s = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        (my - s * mx, s)
    };
    let (a1, s1) = fit(rows.iter().map(|r| (r.3, r.0)).collect());
    let (a2, s2) = fit(rows.iter().map(|r| (r.2, r.1)).collect());
    let est = [a1, -s1, -a2, s2];
    if est.iter().all(|v| v.is_finite() && *v > 0.0) {
        est
    } else {
        [1.0; 4]
    }
}

/// A fitted reference model with its held-out error.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedOde {
    pub label: String,
    pub spec: String,
    pub fit: FitResult,
    pub test: TestError,
}

#[derive(Debug)]
pub struct Baselines {
    pub standard_lv: Result<FittedOde, OdeError>,
    /// Best of the width x depth grid by training error.
    pub neural_ode: Result<FittedOde, OdeError>,
    pub neural_grid: Vec<(usize, usize, Result<f64, OdeError>)>,
    pub hybrid: Result<FittedOde, OdeError>,
}

/// Training budget for the baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub iterations: usize,
    pub lr: f64,
    pub h: f64,
    pub seed: u64,
    pub widths: Vec<usize>,
    pub depths: Vec<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            iterations: super::fit::DEFAULT_ITERATIONS,
            lr: super::fit::DEFAULT_LR,
            h: DEFAULT_H,
            seed: 0,
            widths: NEURAL_WIDTHS.to_vec(),
            depths: NEURAL_DEPTHS.to_vec(),
        }
    }
}

/// Fits `spec` with mechanistic params started by gradient matching (for
/// the four LV rates when declared) and MLP weights from the seed.
pub fn fit_spec(label: &str, spec: &str, data: &OdeDataset, plan: &FitPlan, seed: u64) -> Result<FittedOde, OdeError> {
    let model = OdeModel::parse(spec)?;
    let mut init = model.initial_params(seed);
    let gm = gradient_matching_init(data);
    for (name, v) in ["alpha", "beta", "gamma", "delta"].iter().zip(gm) {
        if let Some(i) = model.spec().params.iter().position(|p| p.name == *name) {
            init[i] = v;
        }
    }
    let fit = fit_ode(&model, data, plan, init)?;
    let test = test_mae(&model, &fit.params, data, plan.h)?;
    // The spec text carries the fitted mechanistic values.
    let mut fitted = model.spec().clone();
    for (p, v) in fitted.params.iter_mut().zip(&fit.params) {
        p.init = *v;
    }
    Ok(FittedOde { label: label.into(), spec: fitted.to_string(), fit, test })
}

pub fn build_baselines(data: &OdeDataset, cfg: &BaselineConfig) -> Baselines {
    let stage = |t: Trainable| Stage::new(t).iterations(cfg.iterations).lr(cfg.lr);
    let single = FitPlan { stages: vec![stage(Trainable::All)], h: cfg.h };
    let two = FitPlan { stages: vec![stage(Trainable::Mechanistic), stage(Trainable::Mlps)], h: cfg.h };
    let standard_lv = fit_spec("standard_lv", STANDARD_LV, data, &single, cfg.seed);
    let hybrid = fit_spec("hybrid_multiplicative", HYBRID_MULTIPLICATIVE, data, &two, cfg.seed);

    let configs: Vec<(usize, usize)> = cfg.widths.iter().flat_map(|&w| cfg.depths.iter().map(move |&d| (w, d))).collect();
    let fits: Vec<Result<FittedOde, OdeError>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|&(w, d)| {
                let single = &single;
                s.spawn(move || fit_spec(&format!("neural_ode_w{w}_d{d}"), &neural_ode_spec(w, d), data, single, cfg.seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fit thread panicked")).collect()
    });
    let neural_grid = configs.iter().zip(&fits).map(|(&(w, d), f)| (w, d, f.as_ref().map(|f| f.fit.train_mse).map_err(Clone::clone))).collect();
    let neural_ode = fits
        .into_iter()
        .filter_map(Result::ok)
        .min_by(|a, b| a.fit.train_mse.total_cmp(&b.fit.train_mse))
        .ok_or_else(|| OdeError::FitFailed("every neural ODE configuration failed".into()));
    Baselines { standard_lv, neural_ode, neural_grid, hybrid }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_and_degenerate_exponent() {
        let p = LvParams { exponent: 1.0, ..LvPreset::oscillating().params };
        let a = simulate_perturbed_lv(&p, [1.0, 1.0], 0.25, 5.0, 0.01, 0.0, 1).unwrap();
        let m = OdeModel::parse(STANDARD_LV).unwrap();
        let tr = m.integrate(&[p.alpha, p.beta, p.gamma, p.delta], &[1.0, 1.0], 0.0, 0.01, 500).unwrap();
        for (r, row) in a.data.y.iter().enumerate() {
            for i in 0..2 {
                assert!((row[i] - tr.y[r * 25][i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn decoupled_prey_grows_exponentially() {
        let m = OdeModel::parse(STANDARD_LV).unwrap();
        let tr = m.integrate(&[0.9, 0.0, 2.1, 0.0], &[1.0, 1.0], 0.0, 0.01, 100).unwrap();
        assert!((tr.last()[0] - 0.9f64.exp()).abs() < 1e-5);
    }

    #[test]
    fn corrected_preset_oscillates() {
        let s = LvPreset::oscillating();
        let sim = simulate_perturbed_lv(&s.params, s.y0, 0.01, 15.0, 0.01, 0.0, 0).unwrap();
        let b = sim.data.column("b").unwrap();
        let maxima = (1..b.len() - 1).filter(|&i| b[i] > b[i - 1] && b[i] > b[i + 1]).count();
        assert!(maxima >= 2, "{maxima}");
        assert!(sim.data.y.iter().all(|r| r[0] > 0.0 && r[1] > 0.0));
        assert_eq!(sim.clamp_events, 0);
        let d = s.simulate(3).unwrap().data;
        assert_eq!((d.t.len(), d.split), (61, 41));
    }

    #[test]
    fn decaying_preset_drives_predators_down() {
        let s = LvPreset::decaying();
        let d = simulate_perturbed_lv(&s.params, s.y0, 0.25, 15.0, 0.01, 0.0, 0).unwrap().data;
        let c = d.column("c").unwrap();
        assert!(c.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn gradient_matching_is_close_on_clean_data() {
        let p = LvParams::standard(0.9, 1.1, 2.1, 1.2);
        let d = simulate_perturbed_lv(&p, [1.0, 1.0], 0.25, 10.0, 0.01, 0.0, 0).unwrap().data;
        let g = gradient_matching_init(&d);
        for (est, truth) in g.iter().zip([0.9, 1.1, 2.1, 1.2]) {
            assert!((est - truth).abs() / truth < 0.15, "{g:?}");
        }
    }

    #[test]
    fn standard_lv_recovers_clean_parameters() {
        let truth = [0.9, 1.1, 2.1, 1.2];
        let p = LvParams::standard(truth[0], truth[1], truth[2], truth[3]);
        let d = simulate_perturbed_lv(&p, [1.0, 1.0], 0.25, 10.0, 0.01, 0.0, 0).unwrap().data;
        let plan = FitPlan { stages: vec![Stage::new(Trainable::All).iterations(1500).lr(0.01)], h: 0.01 };
        let f = fit_spec("lv", STANDARD_LV, &d, &plan, 0).unwrap();
        for (est, t) in f.fit.params.iter().zip(truth) {
            assert!((est - t).abs() / t < 0.05, "{:?}", f.fit.params);
        }
    }

    #[test]
    fn specs_parse() {
        for s in [STANDARD_LV, HYBRID_MULTIPLICATIVE, WARM_START_ADDITIVE, NO_WS_EXAMPLE, HOLLING_CONSTRAINED] {
            OdeModel::parse(s).unwrap();
        }
        assert_eq!(OdeModel::parse(&neural_ode_spec(8, 2)).unwrap().dim(), 2 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
    }

    #[test]
    fn zero_output_layer_matches_mechanistic_core() {
        let data = LvPreset::oscillating().simulate(0).unwrap().data;
        let core = OdeModel::parse(STANDARD_LV).unwrap();
        let hyb = OdeModel::parse(HYBRID_MULTIPLICATIVE).unwrap();
        let th = [0.9, 1.1, 2.1, 1.2];
        let mut full = hyb.initial_params(5);
        full[..4].copy_from_slice(&th);
        let a = core.trajectory_for(&th, &data, 0.01).unwrap();
        let b = hyb.trajectory_for(&full, &data, 0.01).unwrap();
        assert_eq!(a, b);
    }
}

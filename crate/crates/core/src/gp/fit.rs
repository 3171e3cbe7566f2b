//! Marginal likelihood, hyperparameter fitting and prediction.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernel::KernelExpr;
use super::GpError;
use crate::optim::Adam;
use crate::rng::rng_for;

/// Smallest admissible noise variance.
pub const NOISE_FLOOR: f64 = 1e-8;

/// Diagonal jitter escalation tried when a Cholesky factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-8, 1e-6, 1e-4];

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
const LOG_PARAM_BOUND: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub kernel: KernelExpr,
    pub log_noise_variance: f64,
    pub mean: f64,
}

impl GpModel {
    pub fn new(kernel: KernelExpr, noise_variance: f64) -> Self {
        Self {
            kernel,
            log_noise_variance: noise_variance.max(NOISE_FLOOR).ln(),
            mean: 0.0,
        }
    }

    /// Noise-free model, for exact evaluation only; fitting always keeps the
    /// noise at or above [`NOISE_FLOOR`].
    pub fn noiseless(kernel: KernelExpr) -> Self {
        Self { kernel, log_noise_variance: f64::NEG_INFINITY, mean: 0.0 }
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    /// Kernel log-parameters followed by the log noise variance.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.kernel.params();
        p.push(self.log_noise_variance);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let n = self.kernel.num_params();
        self.kernel.set_params(&p[..n]);
        self.log_noise_variance = p[n].max(NOISE_FLOOR.ln());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFitResult {
    pub model: GpModel,
    pub log_marginal_likelihood: f64,
    pub restarts_tried: usize,
    pub converged: bool,
}

/// Options for [`fit_gp`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Random restarts (each multiplied by the period initializations when the
    /// kernel has periodic components).
    pub restarts: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Early stop when |delta lml| stays below `tolerance` for `patience` steps.
    pub tolerance: f64,
    pub patience: usize,
    /// Std-dev of the Gaussian perturbation applied to log-params per restart.
    pub init_jitter: f64,
    pub initial_noise_variance: f64,
    pub seed: u64,
    /// Start the first restart from the expression's current parameters
    /// without perturbation (used to refine inherited parameters).
    pub warm_start: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 3,
            steps: 500,
            learning_rate: 0.05,
            tolerance: 1e-6,
            patience: 20,
            init_jitter: 0.1,
            initial_noise_variance: 0.1,
            seed: 0,
            warm_start: false,
        }
    }
}

/// Period initializations as fractions of the input range.
pub const PERIOD_FRACTIONS: [f64; 5] = [1.0 / 20.0, 1.0 / 10.0, 1.0 / 5.0, 1.0 / 2.0, 1.0];

struct Factor {
    chol: Cholesky<f64, Dyn>,
}

fn kernel_matrix(kernel: &KernelExpr, x: &[f64], noise: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(x[i], x[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += noise;
    }
    k
}

fn factor(mut k: DMatrix<f64>) -> Result<(Factor, f64), GpError> {
    if let Some(chol) = k.clone().cholesky() {
        return Ok((Factor { chol }, 0.0));
    }
    let mut added = 0.0;
    for &j in &JITTER_LADDER {
        for i in 0..k.nrows() {
            k[(i, i)] += j - added;
        }
        added = j;
        if let Some(chol) = k.clone().cholesky() {
            return Ok((Factor { chol }, j));
        }
    }
    Err(GpError::Cholesky)
}

fn check_data(x: &[f64], y: &[f64]) -> Result<(), GpError> {
    if x.is_empty() {
        return Err(GpError::EmptyData);
    }
    if x.len() != y.len() {
        return Err(GpError::LengthMismatch { left: x.len(), right: y.len() });
    }
    Ok(())
}

/// log N(y | mean, K + noise I) in nats.
pub fn log_marginal_likelihood(model: &GpModel, x: &[f64], y: &[f64]) -> Result<f64, GpError> {
    check_data(x, y)?;
    let k = kernel_matrix(&model.kernel, x, model.noise_variance());
    let (f, _) = factor(k)?;
    let r = DVector::from_iterator(y.len(), y.iter().map(|v| v - model.mean));
    let alpha = f.chol.solve(&r);
    let l = f.chol.l_dirty();
    let logdet_half: f64 = (0..y.len()).map(|i| l[(i, i)].ln()).sum();
    Ok(-0.5 * r.dot(&alpha) - logdet_half - 0.5 * y.len() as f64 * LOG_2PI)
}

/// Log marginal likelihood and its gradient w.r.t. [`GpModel::params`].
pub fn lml_with_gradient(model: &GpModel, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>), GpError> {
    check_data(x, y)?;
    let n = x.len();
    let np = model.kernel.num_params();
    let noise = model.noise_variance();
    // dK/dtheta_p for the lower triangle, stored [pair][param].
    let pairs = n * (n + 1) / 2;
    let mut dk = vec![0.0; pairs * np];
    let mut k = DMatrix::zeros(n, n);
    let mut at = 0;
    for i in 0..n {
        for j in 0..=i {
            let v = model.kernel.eval_grad(x[i], x[j], &mut dk[at * np..(at + 1) * np]);
            k[(i, j)] = v;
            k[(j, i)] = v;
            at += 1;
        }
        k[(i, i)] += noise;
    }
    let (f, _) = factor(k)?;
    let r = DVector::from_iterator(n, y.iter().map(|v| v - model.mean));
    let alpha = f.chol.solve(&r);
    let l = f.chol.l_dirty();
    let logdet_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let lml = -0.5 * r.dot(&alpha) - logdet_half - 0.5 * n as f64 * LOG_2PI;

    // W = alpha alpha^T - K^{-1}; dlml/dtheta = 0.5 tr(W dK/dtheta).
    let kinv = f.chol.inverse();
    let mut grad = vec![0.0; np + 1];
    let mut trace_w = 0.0;
    let mut at = 0;
    for i in 0..n {
        for j in 0..=i {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let weight = if i == j {
                trace_w += w;
                0.5 * w
            } else {
                w
            };
            let row = &dk[at * np..(at + 1) * np];
            for (g, d) in grad.iter_mut().zip(row) {
                *g += weight * d;
            }
            at += 1;
        }
    }
    let g_noise = 0.5 * noise * trace_w;
    // At the floor only upward moves are admissible.
    grad[np] = if model.log_noise_variance <= NOISE_FLOOR.ln() { g_noise.max(0.0) } else { g_noise };
    Ok((lml, grad))
}

fn input_range(x: &[f64]) -> f64 {
    let (lo, hi) = crate::stats::min_max(x);
    (hi - lo).max(1e-12)
}

/// Gradient ascent from one initialization. Returns the best point seen.
fn ascend(model: &mut GpModel, x: &[f64], y: &[f64], opts: &FitOptions) -> Result<(f64, bool), GpError> {
    let mut params = model.params();
    let (mut lml, mut grad) = lml_with_gradient(model, x, y)?;
    let mut best = (lml, params.clone());
    let mut adam = Adam::new(params.len(), opts.learning_rate);
    let mut quiet = 0;
    let mut converged = false;
    for _ in 0..opts.steps {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        adam.step(&mut params, &neg);
        for p in params.iter_mut() {
            *p = p.clamp(-LOG_PARAM_BOUND, LOG_PARAM_BOUND);
        }
        model.set_params(&params);
        let Ok((next, g)) = lml_with_gradient(model, x, y) else {
            break;
        };
        if !next.is_finite() {
            break;
        }
        if next > best.0 {
            best = (next, params.clone());
        }
        if (next - lml).abs() < opts.tolerance {
            quiet += 1;
            if quiet >= opts.patience {
                converged = true;
                lml = next;
                break;
            }
        } else {
            quiet = 0;
        }
        lml = next;
        grad = g;
    }
    let _ = lml;
    model.set_params(&best.1);
    Ok((best.0, converged))
}

/// Fits kernel hyperparameters and noise by Adam on the log-parameters,
/// keeping the best restart by log marginal likelihood.
///
/// When the kernel contains periodic components, every restart is run once
/// per period initialization in [`PERIOD_FRACTIONS`] (times the input range).
pub fn fit_gp(expr: &KernelExpr, x: &[f64], y: &[f64], opts: &FitOptions) -> Result<GpFitResult, GpError> {
    check_data(x, y)?;
    let period_slots = expr.period_slots();
    let period_inits: Vec<Option<f64>> = if period_slots.is_empty() {
        vec![None]
    } else {
        let range = input_range(x);
        PERIOD_FRACTIONS.iter().map(|f| Some((f * range).ln())).collect()
    };
    let base = {
        let mut m = GpModel::new(expr.clone(), opts.initial_noise_variance);
        m.mean = 0.0;
        m
    };
    let jitter = Normal::new(0.0, opts.init_jitter.max(0.0)).unwrap();
    let mut best: Option<GpFitResult> = None;
    let mut tried = 0;
    let mut last_err = GpError::Cholesky;
    for restart in 0..opts.restarts.max(1) {
        for (pi, init) in period_inits.iter().enumerate() {
            tried += 1;
            let mut rng = rng_for(opts.seed, &[restart as u64, pi as u64]);
            let mut model = base.clone();
            let mut p = model.params();
            let perturb = !(opts.warm_start && restart == 0);
            if perturb {
                for v in p.iter_mut() {
                    *v += jitter.sample(&mut rng);
                }
            }
            if let Some(lp) = init {
                for &s in &period_slots {
                    *p.get_mut(s).unwrap() = lp + if perturb { jitter.sample(&mut rng) } else { 0.0 };
                }
            }
            // Keep the draw sequence stable regardless of branch taken.
            let _: f64 = rng.random();
            model.set_params(&p);
            match ascend(&mut model, x, y, opts) {
                Ok((lml, converged)) => {
                    let better = best.as_ref().is_none_or(|b| lml > b.log_marginal_likelihood);
                    if better {
                        best = Some(GpFitResult {
                            model,
                            log_marginal_likelihood: lml,
                            restarts_tried: 0,
                            converged,
                        });
                    }
                }
                Err(e) => last_err = e,
            }
        }
    }
    match best {
        Some(mut b) => {
            b.restarts_tried = tried;
            // Report exactly what the stored parameters give.
            b.log_marginal_likelihood = log_marginal_likelihood(&b.model, x, y)?;
            Ok(b)
        }
        None => Err(match last_err {
            GpError::Cholesky => GpError::FitFailed("every restart failed the Cholesky factorization".into()),
            other => other,
        }),
    }
}

/// One unperturbed ascent from the model's current parameters.
pub(crate) fn fit_from_model(mut model: GpModel, x: &[f64], y: &[f64], opts: &FitOptions) -> Result<GpFitResult, GpError> {
    check_data(x, y)?;
    let (_, converged) = ascend(&mut model, x, y, opts)?;
    let lml = log_marginal_likelihood(&model, x, y)?;
    Ok(GpFitResult { model, log_marginal_likelihood: lml, restarts_tried: 1, converged })
}

/// Posterior predictive mean and variance (including observation noise).
pub fn predict(model: &GpModel, x: &[f64], y: &[f64], x_test: &[f64]) -> Result<(Vec<f64>, Vec<f64>), GpError> {
    check_data(x, y)?;
    let n = x.len();
    let k = kernel_matrix(&model.kernel, x, model.noise_variance());
    let (f, _) = factor(k)?;
    let r = DVector::from_iterator(n, y.iter().map(|v| v - model.mean));
    let alpha = f.chol.solve(&r);
    let mut mean = Vec::with_capacity(x_test.len());
    let mut var = Vec::with_capacity(x_test.len());
    let noise = model.noise_variance();
    for &xs in x_test {
        let ks = DVector::from_iterator(n, x.iter().map(|&xi| model.kernel.eval(xs, xi)));
        mean.push(model.mean + ks.dot(&alpha));
        let v = f.chol.l_dirty().solve_lower_triangular(&ks).unwrap_or_else(|| DVector::zeros(n));
        let pv = model.kernel.eval(xs, xs) + noise - v.dot(&v);
        var.push(pv.max(0.0));
    }
    Ok((mean, var))
}

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, GpError> {
    if pred.len() != truth.len() {
        return Err(GpError::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    if pred.is_empty() {
        return Err(GpError::EmptyData);
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Draws one function sample from the GP prior (plus noise) at `x`.
pub fn sample_prior(model: &GpModel, x: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>, GpError> {
    let k = kernel_matrix(&model.kernel, x, model.noise_variance());
    let (f, _) = factor(k)?;
    let z = DVector::from_iterator(x.len(), (0..x.len()).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)));
    let s = f.chol.l() * z;
    Ok(s.iter().map(|v| v + model.mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::kernel::{BaseKernel, KernelKind};

    fn unit_exp_quad() -> KernelExpr {
        KernelExpr::Base(BaseKernel::with_params(KernelKind::ExpQuad, &[1.0, 1.0]).unwrap())
    }

    #[test]
    fn single_point_closed_forms() {
        let m = GpModel::noiseless(unit_exp_quad());
        let lml = log_marginal_likelihood(&m, &[0.0], &[0.0]).unwrap();
        assert!((lml - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        assert!((lml + 0.91894).abs() < 1e-5);
        let m = GpModel::new(unit_exp_quad(), 1.0);
        let lml = log_marginal_likelihood(&m, &[0.0], &[0.0]).unwrap();
        assert!((lml - (-0.5 * (4.0 * std::f64::consts::PI).ln())).abs() < 1e-9);
        assert!((lml + 1.26551).abs() < 1e-5);
    }

    #[test]
    fn lml_gradient_matches_finite_differences() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| (2.0 * v).sin() + 0.1 * v).collect();
        let kernel = KernelExpr::sum(
            KernelExpr::base(KernelKind::Linear),
            KernelExpr::product(KernelExpr::base(KernelKind::Periodic), KernelExpr::base(KernelKind::ExpQuad)),
        );
        let mut m = GpModel::new(kernel, 0.2);
        let p0: Vec<f64> = m.params().iter().enumerate().map(|(i, _)| 0.1 * (i as f64).cos()).collect();
        m.set_params(&p0);
        let (_, g) = lml_with_gradient(&m, &x, &y).unwrap();
        for i in 0..p0.len() {
            let h = 1e-5;
            let mut a = m.clone();
            let mut b = m.clone();
            let mut pa = p0.clone();
            let mut pb = p0.clone();
            pa[i] += h;
            pb[i] -= h;
            a.set_params(&pa);
            b.set_params(&pb);
            let fd = (log_marginal_likelihood(&a, &x, &y).unwrap() - log_marginal_likelihood(&b, &x, &y).unwrap())
                / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-2), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn fit_never_decreases_lml() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 19.0 * 2.0 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.5 * v + 0.05 * (7.0 * v).sin()).collect();
        let expr = KernelExpr::base(KernelKind::Linear);
        let init = GpModel::new(expr.clone(), 0.1);
        let before = log_marginal_likelihood(&init, &x, &y).unwrap();
        let fit = fit_gp(&expr, &x, &y, &FitOptions { restarts: 1, init_jitter: 0.0, ..Default::default() }).unwrap();
        assert!(fit.log_marginal_likelihood >= before);
        let again = log_marginal_likelihood(&fit.model, &x, &y).unwrap();
        assert!((again - fit.log_marginal_likelihood).abs() < 1e-8);
    }

    #[test]
    fn periodic_kernels_try_five_period_inits() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let fit = fit_gp(
            &KernelExpr::base(KernelKind::Periodic),
            &x,
            &y,
            &FitOptions { restarts: 2, steps: 5, ..Default::default() },
        )
        .unwrap();
        assert_eq!(fit.restarts_tried, 10);
        let fit = fit_gp(
            &KernelExpr::base(KernelKind::Linear),
            &x,
            &y,
            &FitOptions { restarts: 2, steps: 5, ..Default::default() },
        )
        .unwrap();
        assert_eq!(fit.restarts_tried, 2);
    }

    #[test]
    fn prediction_limits() {
        let x = [0.0, 0.5, 1.0, 1.5];
        let y = [0.3, -0.2, 0.8, 0.1];
        let m = GpModel::new(unit_exp_quad(), 1e-8);
        let (mean, var) = predict(&m, &x, &y, &x).unwrap();
        for (a, b) in mean.iter().zip(&y) {
            assert!((a - b).abs() < 1e-3);
        }
        assert!(var.iter().all(|v| *v >= 0.0));
        let m = GpModel::new(unit_exp_quad(), 0.3);
        let (_, var) = predict(&m, &x, &y, &[1e3]).unwrap();
        assert!((var[0] - 1.3).abs() < 1e-6);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(mae(&[0.0], &[1.0, 1.0]), Err(GpError::LengthMismatch { .. })));
    }

    #[test]
    fn empty_data_is_rejected() {
        let m = GpModel::new(unit_exp_quad(), 0.1);
        assert!(matches!(log_marginal_likelihood(&m, &[], &[]), Err(GpError::EmptyData)));
    }
}

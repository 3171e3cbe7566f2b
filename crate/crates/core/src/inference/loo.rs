//! Pareto-smoothed importance sampling leave-one-out cross-validation.

use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::stats::log_sum_exp;

/// Minimum number of posterior draws accepted by [`psis_loo`].
pub const MIN_DRAWS: usize = 100;
/// Pareto k above which an observation's estimate is unreliable.
pub const K_WARN: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub elpd_loo: f64,
    pub se: f64,
    /// Effective number of parameters: lpd - elpd_loo.
    pub p_loo: f64,
    pub pointwise: Vec<f64>,
    pub pareto_k: Vec<f64>,
}

impl LooResult {
    pub fn n_high_k(&self) -> usize {
        self.pareto_k.iter().filter(|&&k| k > K_WARN).count()
    }
}

/// Generalized Pareto fit to exceedances `x` (sorted ascending, positive),
/// by the profile-likelihood quadrature estimator of Zhang and Stephens,
/// with the weak prior on the shape used by PSIS. Returns (k, sigma).
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let xstar = x[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    let thetas: Vec<f64> =
        (1..=m).map(|j| 1.0 / x[n - 1] + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / xstar).collect();
    let profile = |theta: f64| {
        let k = x.iter().map(|&v| (-theta * v).ln_1p()).sum::<f64>() / n as f64;
        n as f64 * ((-theta / k).ln() - k - 1.0)
    };
    let l: Vec<f64> = thetas.iter().map(|&t| profile(t)).collect();
    let lse = log_sum_exp(&l);
    let theta_hat: f64 = thetas.iter().zip(&l).map(|(t, li)| t * (li - lse).exp()).sum();
    let k = x.iter().map(|&v| (-theta_hat * v).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta_hat;
    // Shrink toward 0.5 as in the reference PSIS implementation.
    let k = (k * n as f64 + 0.5 * 10.0) / (n as f64 + 10.0);
    (k, sigma)
}

fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * ((-k) * (-p).ln_1p()).exp_m1() / k
    }
}

/// Tail length used for smoothing with `s` draws.
pub fn tail_length(s: usize) -> usize {
    (0.2 * s as f64).min(3.0 * (s as f64).sqrt()).ceil() as usize
}

/// Smooths one vector of log importance ratios in place (normalized to
/// log weights summing to one). Returns the Pareto k estimate.
pub fn psis_smooth(log_ratios: &mut [f64]) -> f64 {
    let s = log_ratios.len();
    let mx = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    log_ratios.iter_mut().for_each(|v| *v -= mx);
    let m = tail_length(s);
    let mut k = 0.0;
    if m >= 5 && m < s {
        let mut order: Vec<usize> = (0..s).collect();
        order.sort_by(|&a, &b| log_ratios[a].total_cmp(&log_ratios[b]));
        let tail = &order[s - m..];
        let lo = log_ratios[tail[0]];
        let hi = log_ratios[tail[m - 1]];
        if (hi - lo).abs() > f64::EPSILON / 100.0 {
            let cutoff = log_ratios[order[s - m - 1]];
            let exp_cut = cutoff.exp();
            let exceed: Vec<f64> = tail.iter().map(|&i| log_ratios[i].exp() - exp_cut).collect();
            let (kh, sigma) = gpd_fit(&exceed);
            k = kh;
            if kh.is_finite() {
                for (z, &i) in tail.iter().enumerate() {
                    let p = (z as f64 + 0.5) / m as f64;
                    log_ratios[i] = (gpd_quantile(p, kh, sigma) + exp_cut).ln();
                }
            }
        }
    }
    // Truncate at the largest raw ratio, then normalize.
    log_ratios.iter_mut().for_each(|v| *v = v.min(0.0));
    let lse = log_sum_exp(log_ratios);
    log_ratios.iter_mut().for_each(|v| *v -= lse);
    k
}

/// PSIS-LOO from a pointwise log-likelihood matrix `ll[draw][obs]`.
pub fn psis_loo(ll: &[Vec<f64>]) -> Result<LooResult, InferenceError> {
    let s = ll.len();
    if s < MIN_DRAWS {
        return Err(InferenceError::TooFewDraws { got: s, needed: MIN_DRAWS });
    }
    let n = ll[0].len();
    if n == 0 || ll.iter().any(|r| r.len() != n) {
        return Err(InferenceError::Mismatch("ragged or empty log-likelihood matrix".into()));
    }
    if ll.iter().flatten().any(|v| !v.is_finite()) {
        return Err(InferenceError::NonFinite("log-likelihood matrix".into()));
    }
    let mut pointwise = Vec::with_capacity(n);
    let mut pareto_k = Vec::with_capacity(n);
    let mut lpd = 0.0;
    let mut col = vec![0.0; s];
    for i in 0..n {
        for (c, row) in col.iter_mut().zip(ll) {
            *c = row[i];
        }
        lpd += log_sum_exp(&col) - (s as f64).ln();
        let mut lw: Vec<f64> = col.iter().map(|v| -v).collect();
        pareto_k.push(psis_smooth(&mut lw));
        let terms: Vec<f64> = lw.iter().zip(&col).map(|(w, l)| w + l).collect();
        pointwise.push(log_sum_exp(&terms));
    }
    let elpd_loo: f64 = pointwise.iter().sum();
    Ok(LooResult { elpd_loo, se: paired_se(&pointwise), p_loo: lpd - elpd_loo, pointwise, pareto_k })
}

/// `sqrt(n * var(x))` with the sample variance.
fn paired_se(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (n * v).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    A,
    B,
    Tie,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::A => "a",
            Verdict::B => "b",
            Verdict::Tie => "tie",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// elpd(a) - elpd(b).
    pub diff: f64,
    pub se_diff: f64,
    pub verdict: Verdict,
}

/// Significance multiple of the standard error.
pub const SE_MULTIPLE: f64 = 4.0;

/// The decision rule alone: significant iff |diff| > 4 se.
pub fn verdict(diff: f64, se_diff: f64) -> Verdict {
    if diff.abs() > SE_MULTIPLE * se_diff {
        if diff > 0.0 {
            Verdict::A
        } else {
            Verdict::B
        }
    } else {
        Verdict::Tie
    }
}

/// Compares two models scored on the same observations, using the paired
/// pointwise differences for the standard error.
pub fn compare(a: &[f64], b: &[f64]) -> Result<Comparison, InferenceError> {
    if a.len() != b.len() {
        return Err(InferenceError::Mismatch(format!("{} vs {} observations", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let diff = d.iter().sum();
    let se_diff = paired_se(&d);
    Ok(Comparison { diff, se_diff, verdict: verdict(diff, se_diff) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_loglik() {
        let ll = vec![vec![-1.0, -2.0, -1.5]; 400];
        let r = psis_loo(&ll).unwrap();
        assert!((r.elpd_loo - -4.5).abs() < 1e-12);
        assert!(r.pareto_k.iter().all(|k| k.abs() < 1e-12));
        let same = vec![vec![-1.0; 5]; 400];
        assert!(psis_loo(&same).unwrap().se.abs() < 1e-12);
    }

    #[test]
    fn shifting_one_observation() {
        let mut rng = rng_for(8, &[]);
        let ll: Vec<Vec<f64>> =
            (0..500).map(|_| (0..4).map(|_| -1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let base = psis_loo(&ll).unwrap();
        let shifted: Vec<Vec<f64>> = ll.iter().map(|r| vec![r[0], r[1] + 2.5, r[2], r[3]]).collect();
        let s = psis_loo(&shifted).unwrap();
        assert!((s.pointwise[1] - base.pointwise[1] - 2.5).abs() < 1e-10);
        assert!((s.pointwise[0] - base.pointwise[0]).abs() < 1e-12);
    }

    #[test]
    fn too_few_draws() {
        assert!(matches!(psis_loo(&vec![vec![0.0]; 50]), Err(InferenceError::TooFewDraws { .. })));
    }

    #[test]
    fn gpd_recovers_shape() {
        // Exceedances from a GPD with k = 0.5, sigma = 1 via inversion.
        let mut rng = rng_for(2, &[]);
        let mut x: Vec<f64> = (0..4000).map(|_| gpd_quantile(rng.random::<f64>(), 0.5, 1.0)).collect();
        x.sort_by(f64::total_cmp);
        let (k, sigma) = gpd_fit(&x);
        assert!((k - 0.5).abs() < 0.08, "{k}");
        assert!((sigma - 1.0).abs() < 0.15, "{sigma}");
    }

    #[test]
    fn compare_rule() {
        assert_eq!(verdict(10.0, 2.0), Verdict::A);
        assert_eq!(verdict(-10.0, 2.0), Verdict::B);
        assert_eq!(verdict(7.0, 2.0), Verdict::Tie);
        let a = [-1.0, -2.0, -0.5];
        let c = compare(&a, &a).unwrap();
        assert_eq!((c.diff, c.verdict), (0.0, Verdict::Tie));
        assert!(compare(&a, &a[..2]).is_err());
    }
}

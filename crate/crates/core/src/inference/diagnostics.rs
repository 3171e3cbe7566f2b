//! Rank-normalized split R-hat and bulk effective sample size.
//!
//! Inputs are one parameter's draws as `chains[c][i]`. Constant draws give
//! NaN, which callers treat as "diagnostic unavailable".

use statrs::distribution::{ContinuousCDF, Normal};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains.iter().flatten().next().copied().unwrap_or(0.0);
    chains.iter().flatten().all(|&x| x == first)
}

/// Splits each chain into its first and second half (dropping a middle
/// draw when the length is odd).
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        out.push(c[..h].to_vec());
        out.push(c[c.len() - h..].to_vec());
    }
    out
}

/// Replaces draws by normal scores of their pooled fractional ranks
/// (average rank for ties).
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (c, xs) in chains.iter().enumerate() {
        for (i, &x) in xs.iter().enumerate() {
            all.push((x, c, i));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // 1-based average rank of the tie block.
        let r = (i + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((r - 0.375) / (s + 0.25));
        for &(_, c, k) in &all[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

/// Classic potential scale reduction over the given chains.
fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    let b = n * var(&means);
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Rank-normalized split R-hat: the larger of the bulk and folded (tail)
/// versions.
pub fn rhat(chains: &[Vec<f64>]) -> f64 {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) || is_constant(chains) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    let bulk = rhat_basic(&rank_normalize(&split));
    let mut pooled: Vec<f64> = split.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mid = pooled.len() / 2;
    let median = if pooled.len() % 2 == 0 { 0.5 * (pooled[mid - 1] + pooled[mid]) } else { pooled[mid] };
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|x| (x - median).abs()).collect()).collect();
    let tail = rhat_basic(&rank_normalize(&folded));
    bulk.max(tail)
}

/// Effective sample size with Geyer's initial monotone sequence estimator
/// (no rank normalization or splitting).
pub fn ess_basic(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 || is_constant(chains) {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let centered: Vec<Vec<f64>> = chains.iter().zip(&means).map(|(c, mu)| c.iter().map(|x| x - mu).collect()).collect();
    // Mean over chains of the biased autocovariance at `lag`.
    let acov = |lag: usize| -> f64 {
        centered
            .iter()
            .map(|c| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += var(&means);
    }
    let rho_at = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho_at(1);
    rho[1] = odd;
    let mut t = 0;
    while t + 5 < n && (even + odd) > 0.0 {
        t += 2;
        even = rho_at(t);
        odd = rho_at(t + 1);
        if even + odd >= 0.0 {
            rho[t] = even;
            rho[t + 1] = odd;
        }
    }
    let max_t = t;
    if even > 0.0 {
        rho[max_t] = even;
    }
    // Initial monotone sequence.
    let mut t = 0;
    while t + 4 <= max_t {
        t += 2;
        let prev = rho[t - 2] + rho[t - 1];
        if rho[t] + rho[t + 1] > prev {
            rho[t] = prev / 2.0;
            rho[t + 1] = prev / 2.0;
        }
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t]).max(1.0 / total.log10());
    total / tau
}

/// Bulk ESS: ESS of the rank-normalized split chains.
pub fn bulk_ess(chains: &[Vec<f64>]) -> f64 {
    if chains.is_empty() || is_constant(chains) {
        return f64::NAN;
    }
    ess_basic(&rank_normalize(&split_chains(chains)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn iid(seed: u64, m: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, &[]);
        (0..m).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn iid_chains() {
        let c = iid(1, 4, 1000);
        let r = rhat(&c);
        assert!((0.99..=1.01).contains(&r), "{r}");
        let e = bulk_ess(&c);
        assert!((3200.0..=4800.0).contains(&e), "{e}");
    }

    #[test]
    fn shifted_chain_is_detected() {
        let mut c = iid(2, 4, 1000);
        c[3].iter_mut().for_each(|x| *x += 10.0);
        assert!(rhat(&c) > 1.5);
    }

    #[test]
    fn ar1_ess() {
        let rho = 0.9;
        let mut rng = rng_for(3, &[]);
        let (m, n) = (4, 5000);
        let c: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - rho * rho as f64).sqrt();
                (0..n)
                    .map(|_| {
                        x = rho * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        let want = (m * n) as f64 * (1.0 - rho) / (1.0 + rho);
        let got = bulk_ess(&c);
        assert!(got > want / 2.0 && got < want * 2.0, "{got} vs {want}");
    }

    #[test]
    fn constant_is_nan() {
        let c = vec![vec![1.0; 100]; 4];
        assert!(rhat(&c).is_nan());
        assert!(bulk_ess(&c).is_nan());
    }

    #[test]
    fn duplicated_halves() {
        let one = iid(4, 1, 2000).pop().unwrap();
        let c = vec![one[..1000].to_vec(), one[..1000].to_vec()];
        let n = 500.0;
        assert!(rhat(&c) <= 1.0 + 2.0 / n);
    }

    #[test]
    fn permutation_invariance() {
        let c = iid(5, 4, 300);
        let mut p = c.clone();
        p.swap(0, 3);
        p.swap(1, 2);
        assert!((rhat(&c) - rhat(&p)).abs() < 1e-12);
        assert!((bulk_ess(&c) - bulk_ess(&p)).abs() < 1e-9);
    }
}

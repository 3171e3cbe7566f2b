//! Greedy compositional search and the non-compositional baselines.

use std::collections::HashSet;

use rand::Rng;

use super::fit::{fit_gp, FitOptions, GpFitResult, GpModel, PERIOD_FRACTIONS};
use super::kernel::{BaseKernel, KernelExpr, KernelKind, Mutation};
use super::GpError;
use crate::rng::{derive_seed, rng_for};


/// Score used to rank candidates and decide whether a depth is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchCriterion {
    /// Log marginal likelihood.
    #[default]
    Lml,
    /// Log marginal likelihood minus `0.5 * p * ln n`, with `p` counting the
    /// kernel parameters and the noise variance.
    Bic,
}

impl SearchCriterion {
    pub fn score(self, fit: &GpFitResult, n: usize) -> f64 {
        match self {
            SearchCriterion::Lml => fit.log_marginal_likelihood,
            SearchCriterion::Bic => {
                let p = fit.model.kernel.num_params() + 1;
                fit.log_marginal_likelihood - 0.5 * p as f64 * (n as f64).ln()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GreedyOptions {
    pub criterion: SearchCriterion,
    pub base_set: Vec<KernelKind>,
    pub max_depth: usize,
    /// Options for fitting the depth-0 base kernels.
    pub base_fit: FitOptions,
    /// Options for refining mutated candidates from inherited parameters.
    pub refine: FitOptions,
    /// Every candidate first gets this many ascent steps; only the best
    /// `finalists` are then refined with the full `refine` budget. Setting
    /// `finalists` to `usize::MAX` refines every candidate fully.
    pub screen_steps: usize,
    pub finalists: usize,
    /// A depth is accepted only if it improves the incumbent by more than
    /// this many nats.
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        Self {
            criterion: SearchCriterion::Lml,
            base_set: vec![KernelKind::ExpQuad, KernelKind::Periodic, KernelKind::Linear, KernelKind::Polynomial],
            max_depth: 10,
            base_fit: FitOptions::default(),
            refine: FitOptions { restarts: 1, steps: 150, tolerance: 1e-5, ..FitOptions::default() },
            screen_steps: 25,
            finalists: 4,
            min_improvement: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyStep {
    pub depth: usize,
    pub kernel: String,
    pub log_marginal_likelihood: f64,
    /// Value of the search criterion.
    pub score: f64,
    pub candidates: usize,
}

#[derive(Debug, Clone)]
pub struct GreedyResult {
    pub best: GpFitResult,
    /// Accepted incumbents, depth 0 first. Scores are nondecreasing along
    /// this list.
    pub accepted: Vec<GreedyStep>,
    /// Number of depths explored past depth 0 (including a final rejected one).
    pub depths_explored: usize,
}

const TIE_EPS: f64 = 1e-9;

/// `a` beats `b`: higher score; on a tie, fewer parameters; on a further tie
/// the earlier candidate is kept (callers iterate in enumeration order).
fn beats(a: &GpFitResult, b: &GpFitResult, c: SearchCriterion, n: usize) -> bool {
    let (la, lb) = (c.score(a, n), c.score(b, n));
    if (la - lb).abs() > TIE_EPS {
        return la > lb;
    }
    a.model.kernel.num_params() < b.model.kernel.num_params()
}

/// Refines a mutated kernel starting from inherited parameters. A newly
/// introduced periodic leaf is tried at every period initialization.
fn refine_candidate(
    parent: &GpModel,
    child: KernelExpr,
    m: Mutation,
    x: &[f64],
    y: &[f64],
    opts: &FitOptions,
) -> Result<GpFitResult, GpError> {
    let new_kind = match m {
        Mutation::AddBase { base, .. } | Mutation::MulBase { base, .. } | Mutation::ReplaceBase { base, .. } => base,
    };
    // Locate the slots of the new leaf: the only leaf whose kind/params are
    // defaults and which was not in the parent at the same position. The
    // parent's leaves keep their order, so diff the flattened params.
    let child_leaves = child.leaves();
    let new_leaf_index = match m {
        Mutation::ReplaceBase { site, .. } => leaf_index_of_site(&parent.kernel, site),
        _ => leaf_index_after_insert(&parent.kernel, &child),
    };
    let mut offset = 0;
    for leaf in child_leaves.iter().take(new_leaf_index) {
        offset += leaf.kind.num_params();
    }
    let period_slot = new_kind.period_slot().map(|s| offset + s);
    let range = {
        let (lo, hi) = crate::stats::min_max(x);
        (hi - lo).max(1e-12)
    };
    let inits: Vec<Option<f64>> = match period_slot {
        Some(_) => PERIOD_FRACTIONS.iter().map(|f| Some((f * range).ln())).collect(),
        None => vec![None],
    };
    let mut best: Option<GpFitResult> = None;
    for init in inits {
        let mut kernel = child.clone();
        if let (Some(slot), Some(lp)) = (period_slot, init) {
            let mut p = kernel.params();
            p[slot] = lp;
            kernel.set_params(&p);
        }
        let model = GpModel { kernel, log_noise_variance: parent.log_noise_variance, mean: parent.mean };
        let fit = fit_gp_from(model, x, y, opts);
        if let Ok(f) = fit {
            if best.as_ref().is_none_or(|b| f.log_marginal_likelihood > b.log_marginal_likelihood) {
                best = Some(f);
            }
        }
    }
    best.ok_or_else(|| GpError::FitFailed("all refinements failed".into()))
}

fn leaf_index_of_site(expr: &KernelExpr, site: usize) -> usize {
    // Count leaves that precede `site` in preorder.
    fn go(e: &KernelExpr, site: usize, counter: &mut usize, leaves: &mut usize) -> bool {
        if *counter == site {
            return true;
        }
        *counter += 1;
        match e {
            KernelExpr::Base(_) => {
                *leaves += 1;
                false
            }
            KernelExpr::Sum(a, b) | KernelExpr::Product(a, b) => {
                go(a, site, counter, leaves) || go(b, site, counter, leaves)
            }
        }
    }
    let mut leaves = 0;
    go(expr, site, &mut 0, &mut leaves);
    leaves
}

fn leaf_index_after_insert(parent: &KernelExpr, child: &KernelExpr) -> usize {
    let p = parent.leaves();
    let c = child.leaves();
    p.iter()
        .zip(c.iter())
        .position(|(a, b)| a != b)
        .unwrap_or(p.len())
}

/// Single warm-started ascent from the model's current parameters.
fn fit_gp_from(model: GpModel, x: &[f64], y: &[f64], opts: &FitOptions) -> Result<GpFitResult, GpError> {
    let mut o = opts.clone();
    o.warm_start = true;
    o.restarts = 1;
    o.initial_noise_variance = model.noise_variance();
    // fit_gp would re-sweep periods; the periodic inits are handled by the
    // caller, so drive the ascent through a period-free copy of the options.
    super::fit::fit_from_model(model, x, y, &o)
}

/// Greedy search: starting from the best single base kernel, repeatedly
/// fit every single mutation of the incumbent and accept the best one while
/// it improves the criterion by more than `min_improvement`.
pub fn greedy_search(x: &[f64], y: &[f64], opts: &GreedyOptions) -> Result<GreedyResult, GpError> {
    if opts.base_set.is_empty() {
        return Err(GpError::EmptyBaseSet);
    }
    let mut incumbent: Option<GpFitResult> = None;
    for (i, &kind) in opts.base_set.iter().enumerate() {
        let fo = FitOptions { seed: derive_seed(opts.seed, &[0, i as u64]), ..opts.base_fit.clone() };
        if let Ok(fit) = fit_gp(&KernelExpr::base(kind), x, y, &fo) {
            if incumbent.as_ref().is_none_or(|b| beats(&fit, b, opts.criterion, x.len())) {
                incumbent = Some(fit);
            }
        }
    }
    let mut incumbent =
        incumbent.ok_or_else(|| GpError::FitFailed("no base kernel could be fitted".into()))?;
    let mut accepted = vec![GreedyStep {
        depth: 0,
        kernel: incumbent.model.kernel.to_string(),
        log_marginal_likelihood: incumbent.log_marginal_likelihood,
        score: opts.criterion.score(&incumbent, x.len()),
        candidates: opts.base_set.len(),
    }];
    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(incumbent.model.kernel.canonical_key());
    let mut depths_explored = 0;
    for depth in 1..=opts.max_depth {
        depths_explored = depth;
        let parent = incumbent.model.clone();
        let mut count = 0;
        let mut round_keys = HashSet::new();
        let screen = FitOptions { steps: opts.screen_steps, ..opts.refine.clone() };
        let mut screened: Vec<(usize, GpFitResult)> = Vec::new();
        for m in parent.kernel.neighbourhood(&opts.base_set) {
            let child = parent.kernel.mutate(m)?;
            let key = child.canonical_key();
            if seen.contains(&key) || !round_keys.insert(key) {
                continue;
            }
            count += 1;
            let fit = if opts.finalists == usize::MAX {
                refine_candidate(&parent, child, m, x, y, &opts.refine)
            } else {
                refine_candidate(&parent, child, m, x, y, &screen)
            };
            if let Ok(fit) = fit {
                screened.push((count, fit));
            }
        }
        if opts.finalists != usize::MAX {
            // Stable sort keeps enumeration order among ties.
            let n = x.len();
            screened.sort_by(|a, b| opts.criterion.score(&b.1, n).total_cmp(&opts.criterion.score(&a.1, n)));
            screened.truncate(opts.finalists.max(1));
            screened.sort_by_key(|(i, _)| *i);
            screened = screened
                .into_iter()
                .filter_map(|(i, f)| fit_gp_from(f.model, x, y, &opts.refine).ok().map(|f| (i, f)))
                .collect();
        }
        let mut best: Option<GpFitResult> = None;
        for (_, fit) in screened {
            if best.as_ref().is_none_or(|b| beats(&fit, b, opts.criterion, x.len())) {
                best = Some(fit);
            }
        }
        let Some(best) = best else { break };
        let gain = opts.criterion.score(&best, x.len()) - opts.criterion.score(&incumbent, x.len());
        if gain <= opts.min_improvement {
            break;
        }
        seen.insert(best.model.kernel.canonical_key());
        incumbent = best;
        accepted.push(GreedyStep {
            depth,
            kernel: incumbent.model.kernel.to_string(),
            log_marginal_likelihood: incumbent.log_marginal_likelihood,
            score: opts.criterion.score(&incumbent, x.len()),
            candidates: count,
        });
    }
    // Candidates were refined on a short budget; give the winner the full one.
    let polish = FitOptions { steps: opts.base_fit.steps, ..opts.refine.clone() };
    if let Ok(p) = fit_gp_from(incumbent.model.clone(), x, y, &polish) {
        if p.log_marginal_likelihood > incumbent.log_marginal_likelihood {
            incumbent = p;
        }
    }
    Ok(GreedyResult { best: incumbent, accepted, depths_explored })
}

/// Single periodic kernel baseline (five period initializations per restart).
pub fn periodic_baseline(x: &[f64], y: &[f64], opts: &FitOptions) -> Result<GpFitResult, GpError> {
    fit_gp(&KernelExpr::base(KernelKind::Periodic), x, y, opts)
}

/// Spectral-mixture kernel with `components` components, best of `restarts`
/// random initializations by log marginal likelihood.
///
/// Restart `r` always draws the same initialization for a given seed, so a
/// run with more restarts explores a superset of a run with fewer.
pub fn spectral_mixture_fit(
    x: &[f64],
    y: &[f64],
    components: usize,
    restarts: usize,
    opts: &FitOptions,
) -> Result<GpFitResult, GpError> {
    if x.len() < 2 {
        return Err(GpError::EmptyData);
    }
    let components = components.max(1);
    let (lo, hi) = crate::stats::min_max(x);
    let range = (hi - lo).max(1e-12);
    let min_gap = x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min).max(1e-12);
    let nyquist = 0.5 / min_gap;
    let y_var = crate::stats::variance(y).max(1e-6);
    let mut best: Option<GpFitResult> = None;
    let mut tried = 0;
    for r in 0..restarts.max(1) {
        let mut rng = rng_for(opts.seed, &[0x5e, r as u64]);
        let mut kernel: Option<KernelExpr> = None;
        for _ in 0..components {
            let weight = y_var / components as f64;
            let freq = rng.random_range(1.0 / range..nyquist.max(2.0 / range)) * 0.5;
            let bandwidth_sd = range * rng.random_range(0.1..1.0);
            let scale = 1.0 / (bandwidth_sd * bandwidth_sd);
            let leaf = KernelExpr::Base(BaseKernel::with_params(KernelKind::Spectral, &[weight, freq, scale])?);
            kernel = Some(match kernel {
                None => leaf,
                Some(k) => KernelExpr::sum(k, leaf),
            });
        }
        let model = GpModel::new(kernel.expect("at least one component"), opts.initial_noise_variance);
        tried += 1;
        if let Ok(fit) = fit_gp_from(model, x, y, opts) {
            if best.as_ref().is_none_or(|b| fit.log_marginal_likelihood > b.log_marginal_likelihood) {
                best = Some(fit);
            }
        }
    }
    let mut best = best.ok_or_else(|| GpError::FitFailed("every spectral-mixture initialization failed".into()))?;
    best.restarts_tried = tried;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..30).map(|i| -1.5 + 3.0 * i as f64 / 29.0).collect();
        let y = x.iter().map(|v| 0.8 * v + 0.3 * (6.0 * v).sin()).collect();
        (x, y)
    }

    fn quick() -> GreedyOptions {
        GreedyOptions {
            base_fit: FitOptions { restarts: 1, steps: 60, ..FitOptions::default() },
            refine: FitOptions { restarts: 1, steps: 30, ..FitOptions::default() },
            screen_steps: 10,
            finalists: 2,
            ..GreedyOptions::default()
        }
    }

    #[test]
    fn depth_zero_returns_best_base_kernel() {
        let (x, y) = series();
        let r = greedy_search(&x, &y, &GreedyOptions { max_depth: 0, ..quick() }).unwrap();
        assert_eq!(r.accepted.len(), 1);
        assert!(matches!(r.best.model.kernel, KernelExpr::Base(_)));
        for kind in KernelKind::BASE {
            let fo = FitOptions { restarts: 1, steps: 60, ..FitOptions::default() };
            if let Ok(f) = fit_gp(&KernelExpr::base(kind), &x, &y, &fo) {
                assert!(f.log_marginal_likelihood <= r.best.log_marginal_likelihood + 1.0);
            }
        }
    }

    #[test]
    fn accepted_scores_never_decrease() {
        let (x, y) = series();
        for criterion in [SearchCriterion::Lml, SearchCriterion::Bic] {
            let r = greedy_search(&x, &y, &GreedyOptions { max_depth: 3, criterion, ..quick() }).unwrap();
            for w in r.accepted.windows(2) {
                assert!(w[1].score > w[0].score, "{:?}", r.accepted);
            }
        }
    }

    #[test]
    fn empty_base_set_is_an_error() {
        let (x, y) = series();
        let o = GreedyOptions { base_set: vec![], ..quick() };
        assert!(matches!(greedy_search(&x, &y, &o), Err(GpError::EmptyBaseSet)));
    }

    #[test]
    fn spectral_mixture_more_restarts_never_worse() {
        let (x, y) = series();
        let o = FitOptions { steps: 40, ..FitOptions::default() };
        let one = spectral_mixture_fit(&x, &y, 2, 1, &o).unwrap();
        let five = spectral_mixture_fit(&x, &y, 2, 5, &o).unwrap();
        assert_eq!(five.restarts_tried, 5);
        assert!(five.log_marginal_likelihood >= one.log_marginal_likelihood);
    }
}

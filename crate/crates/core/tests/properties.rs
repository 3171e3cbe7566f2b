//! Property tests over randomly generated tapes, kernels, draws and plans.

use boxloop_core::autodiff::{TapeBuilder, Var};
use boxloop_core::boxloop::{best_of, top_k, Backend, CandidateProgram, CandidateStatus, Failure, FailureKind};
use boxloop_core::gp::{KernelExpr, KernelKind, Mutation};
use boxloop_core::inference::{bulk_ess, psis_loo, rhat};
use boxloop_core::ode::{fit_ode, FitPlan, OdeDataset, OdeModel, Stage, Trainable};
use boxloop_core::probprog::{parse_model, CompiledModel, DataTable};
use boxloop_core::rng::rng_for;
use boxloop_core::fixtures;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Appends a random expression over `inputs` and returns its output.
fn random_expr(b: &mut TapeBuilder, inputs: &[Var], seed: u64) -> Var {
    let mut rng = rng_for(seed, &[0xe1]);
    let mut pool = inputs.to_vec();
    for _ in 0..rng.random_range(3..12) {
        let a = pool[rng.random_range(0..pool.len())];
        let c = pool[rng.random_range(0..pool.len())];
        let v = match rng.random_range(0..8) {
            0 => b.add(a, c),
            1 => b.mul(a, c),
            2 => b.sin(a),
            3 => b.tanh(a),
            4 => {
                let s = b.square(a);
                let d = b.add_const(s, 1.0);
                b.log(d)
            }
            5 => {
                let s = b.square(c);
                let d = b.add_const(s, 1.0);
                b.div(a, d)
            }
            6 => b.softplus(a),
            _ => b.sub(a, c),
        };
        pool.push(v);
    }
    *pool.last().expect("nonempty pool")
}

fn arb_kernel() -> impl Strategy<Value = KernelExpr> {
    let leaf = prop::sample::select(KernelKind::AUGMENTED.to_vec()).prop_map(KernelExpr::base);
    leaf.prop_recursive(4, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| KernelExpr::sum(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| KernelExpr::product(a, b)),
        ]
    })
}

fn with_random_params(mut k: KernelExpr, seed: u64) -> KernelExpr {
    let mut rng = rng_for(seed, &[0x7a]);
    let p: Vec<f64> = (0..k.num_params()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    k.set_params(&p);
    k
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn candidate(index: usize, score: Option<f64>) -> CandidateProgram {
    CandidateProgram {
        backend: Backend::Gp,
        round: 0,
        index,
        source: format!("program {index}"),
        seed: index as u64,
        status: match score {
            Some(_) => CandidateStatus::FitOk,
            None => CandidateStatus::FitFailed(Failure::new(FailureKind::ParseError, "bad")),
        },
        score,
        stats: None,
        details: None,
    }
}

/// The dataset each bundled program is written against.
fn program_dataset(name: &str) -> DataTable {
    fixtures::dataset(name.strip_suffix("_expert").unwrap_or("dugongs")).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn gradient_is_linear(sf in any::<u64>(), sg in any::<u64>(), x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let grad = |seeds: &[u64]| {
            let mut b = TapeBuilder::new();
            let inputs = b.inputs(3);
            let outs: Vec<Var> = seeds.iter().map(|&s| random_expr(&mut b, &inputs, s)).collect();
            let out = b.sum(&outs);
            b.finish(out).gradient(&x).values
        };
        let (f, g, fg) = (grad(&[sf]), grad(&[sg]), grad(&[sf, sg]));
        for i in 0..3 {
            prop_assert!((fg[i] - (f[i] + g[i])).abs() <= 1e-12 * (1.0 + f[i].abs() + g[i].abs()));
        }
    }

    #[test]
    fn tape_evaluation_is_bit_identical(s in any::<u64>(), x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let mut b = TapeBuilder::new();
        let inputs = b.inputs(3);
        let out = random_expr(&mut b, &inputs, s);
        let tape = b.finish(out);
        let (a, c) = (tape.gradient(&x), tape.gradient(&x));
        prop_assert_eq!(a.value.to_bits(), c.value.to_bits());
        prop_assert_eq!(bits(&a.values), bits(&c.values));
    }

    #[test]
    fn sums_and_products_evaluate_exactly(a in arb_kernel(), b in arb_kernel(), s in any::<u64>(), x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let (a, b) = (with_random_params(a, s), with_random_params(b, s ^ 1));
        let sum = KernelExpr::sum(a.clone(), b.clone());
        let prod = KernelExpr::product(a.clone(), b.clone());
        prop_assert_eq!(sum.eval(x, y).to_bits(), (a.eval(x, y) + b.eval(x, y)).to_bits());
        prop_assert_eq!(prod.eval(x, y).to_bits(), (a.eval(x, y) * b.eval(x, y)).to_bits());
    }

    #[test]
    fn kernel_matrices_are_symmetric_psd(k in arb_kernel(), s in any::<u64>()) {
        let k = with_random_params(k, s);
        let mut rng = rng_for(s, &[0x1f]);
        let x: Vec<f64> = (0..15).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = DMatrix::from_fn(x.len(), x.len(), |i, j| k.eval(x[i], x[j]));
        prop_assert!((0..x.len()).all(|i| (0..x.len()).all(|j| m[(i, j)] == m[(j, i)])));
        prop_assert!((&m + DMatrix::identity(x.len(), x.len()) * 1e-8).cholesky().is_some());
    }

    #[test]
    fn mutation_leaves_the_original_untouched(k in arb_kernel(), s in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let k = with_random_params(k, s);
        let before = (k.to_string(), bits(&k.params()));
        let moves = k.neighbourhood(&KernelKind::BASE);
        let m: Mutation = moves[pick.index(moves.len())];
        let child = k.mutate(m).unwrap();
        prop_assert_eq!((k.to_string(), bits(&k.params())), before);
        prop_assert!(child.num_subtrees() >= k.num_subtrees());
    }

    #[test]
    fn constrain_inverts_unconstrain(pick in any::<prop::sample::Index>(), s in any::<u64>()) {
        let programs: Vec<(&str, &str)> = fixtures::all_programs().collect();
        let (name, src) = programs[pick.index(programs.len())];
        let model = CompiledModel::new(&parse_model(src).unwrap(), &program_dataset(name)).unwrap();
        let mut rng = rng_for(s, &[0xb1]);
        let u: Vec<f64> = (0..model.dim()).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let theta = model.constrain(&u).unwrap();
        let back = model.constrain(&model.unconstrain(&theta).unwrap()).unwrap();
        for (a, b) in theta.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{name}: {a} vs {b}");
        }
    }

    #[test]
    fn diagnostics_ignore_chain_order(s in any::<u64>(), perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut rng = rng_for(s, &[0xd1]);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|c| (0..200).map(|_| 0.1 * c as f64 + rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| chains[i].clone()).collect();
        prop_assert!((rhat(&chains) - rhat(&shuffled)).abs() < 1e-12);
        prop_assert!((bulk_ess(&chains) - bulk_ess(&shuffled)).abs() < 1e-8);
    }

    #[test]
    fn loo_shift_moves_one_term(s in any::<u64>(), obs in 0usize..5, c in -5.0f64..5.0) {
        let mut rng = rng_for(s, &[0x10]);
        let ll: Vec<Vec<f64>> = (0..400).map(|_| (0..5).map(|_| -1.0 + 0.4 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let shifted: Vec<Vec<f64>> = ll.iter().map(|r| { let mut r = r.clone(); r[obs] += c; r }).collect();
        let (a, b) = (psis_loo(&ll).unwrap(), psis_loo(&shifted).unwrap());
        for i in 0..5 {
            let want = if i == obs { c } else { 0.0 };
            prop_assert!((b.pointwise[i] - a.pointwise[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn best_ignores_failures(scores in prop::collection::vec(prop::option::of(-100.0f64..100.0), 1..12), k in 0usize..6) {
        let cands: Vec<CandidateProgram> = scores.iter().enumerate().map(|(i, s)| candidate(i, *s)).collect();
        let ok: Vec<CandidateProgram> = cands.iter().filter(|c| c.score.is_some()).cloned().collect();
        let best = best_of(&cands).map(|c| c.index);
        prop_assert_eq!(best, best_of(&ok).map(|c| c.index));
        if let Some(b) = best {
            prop_assert!(ok.iter().all(|c| c.score <= cands[b].score));
        }
        let ex = top_k(&cands, k);
        prop_assert_eq!(ex.len(), k.min(ok.len()));
        prop_assert!(ex.iter().all(|&i| cands[i].score.is_some()));
        prop_assert!(ex.windows(2).all(|w| cands[w[0]].score >= cands[w[1]].score));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    /// Parameters outside a stage's trainable set keep their exact bits.
    #[test]
    fn stages_never_touch_frozen_params(stages in prop::collection::vec(0usize..4, 1..4), s in any::<u64>()) {
        let model = OdeModel::parse("param theta = 0.8\nparam k = 0.1\nmlp g(b) -> 1 width 3\ndb/dt = -theta * b + k + 0.1 * g").unwrap();
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<Vec<f64>> = t.iter().map(|v| vec![(-1.2 * v).exp() + 0.05]).collect();
        let data = OdeDataset::new("decay", t, vec!["b".into()], y).unwrap();
        let mut params = model.initial_params(s);
        let names = model.param_names();
        for choice in stages {
            let trainable = match choice {
                0 => Trainable::Mechanistic,
                1 => Trainable::Mlps,
                2 => Trainable::Named(vec!["k".into()]),
                _ => Trainable::All,
            };
            let mask = match &trainable {
                Trainable::Mechanistic => model.mechanistic_mask(),
                Trainable::Mlps => model.mlp_mask(),
                Trainable::Named(n) => names.iter().map(|p| n.contains(p)).collect(),
                Trainable::All => vec![true; params.len()],
            };
            let plan = FitPlan { stages: vec![Stage::new(trainable).iterations(15)], h: 0.01 };
            let next = fit_ode(&model, &data, &plan, params.clone()).unwrap().params;
            for ((a, b), m) in params.iter().zip(&next).zip(&mask) {
                if !m {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            params = next;
        }
    }

    #[test]
    fn integration_is_deterministic(theta in 0.1f64..2.0, y0 in 0.1f64..3.0) {
        let model = OdeModel::parse("param theta = 1\nmlp g(b) -> 1\ndb/dt = -theta * b + 0.1 * g").unwrap();
        let mut p = model.initial_params(3);
        p[0] = theta;
        let a = model.integrate(&p, &[y0], 0.0, 0.01, 100).unwrap();
        let b = model.integrate(&p, &[y0], 0.0, 0.01, 100).unwrap();
        prop_assert_eq!(a, b);
    }
}

/// For single-parameter priors, exp(log_prior) integrates to one over the
/// unconstrained line, so the change-of-variables term is right.
#[test]
fn priors_integrate_to_one() {
    let table = DataTable::from_pairs("d", &[("y", &[0.5])]).unwrap();
    let priors = [
        ("Normal(1, 2)", "Normal(theta, 1)"),
        ("HalfNormal(1.5)", "Normal(0, theta)"),
        ("HalfCauchy(2)", "Normal(0, theta)"),
        ("Exponential(0.7)", "Normal(0, theta)"),
        ("Gamma(2, 3)", "Normal(0, theta)"),
        ("LogNormal(0, 0.5)", "Normal(0, theta)"),
        ("Beta(2, 5)", "Normal(theta, 1)"),
        ("Uniform(-1, 3)", "Normal(theta, 1)"),
        ("StudentT(4, 0, 1)", "Normal(theta, 1)"),
    ];
    for (prior, lik) in priors {
        let src = format!("model m {{\n data y: vector[N]\n param theta ~ {prior}\n y ~ {lik}\n}}");
        let model = CompiledModel::new(&parse_model(&src).unwrap(), &table).unwrap();
        // Logistic saturates to exactly 0 or 1 beyond |u| ~ 37.
        let (lo, hi, n) = (-30.0, 30.0, 120_000);
        let du = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * model.log_prior(&[lo + i as f64 * du]).exp()
            })
            .sum::<f64>()
            * du;
        assert!((total - 1.0).abs() < 1e-3, "{prior}: {total}");
    }
}

//! Hot paths: tape gradients, GP likelihood, HMC, PSIS-LOO and RK4.

use std::hint::black_box;

use boxloop_core::autodiff::TapeBuilder;
use boxloop_core::fixtures;
use boxloop_core::gp::{lml_with_gradient, parse_kernel, GpModel};
use boxloop_core::inference::{psis_loo, score_model, SamplerConfig};
use boxloop_core::ode::lv::{HYBRID_MULTIPLICATIVE, STANDARD_LV};
use boxloop_core::ode::{LvPreset, OdeModel};
use boxloop_core::probprog::CompiledModel;
use criterion::{criterion_group, criterion_main, Criterion};

fn autodiff(c: &mut Criterion) {
    let mut b = TapeBuilder::new();
    let x = b.inputs(50);
    let terms: Vec<_> = x
        .windows(2)
        .map(|w| {
            let p = b.mul(w[0], w[1]);
            let s = b.sin(p);
            b.tanh(s)
        })
        .collect();
    let out = b.sum(&terms);
    let tape = b.finish(out);
    let point: Vec<f64> = (0..50).map(|i| 0.01 * i as f64).collect();
    c.bench_function("tape gradient, 50 inputs", |bch| bch.iter(|| tape.gradient(black_box(&point))));
}

fn gp(c: &mut Criterion) {
    let air = fixtures::time_series("air").expect("bundled series").normalized();
    let model = GpModel::new(parse_kernel("Linear + Periodic * ExpQuad").unwrap(), 0.1);
    c.bench_function("gp lml + gradient, airline train split", |bch| {
        bch.iter(|| lml_with_gradient(black_box(&model), &air.x_train, &air.y_train).unwrap())
    });
}

fn ppl(c: &mut Criterion) {
    let program = fixtures::expert("eight_schools").unwrap();
    let table = fixtures::dataset("eight_schools").unwrap();
    let model = CompiledModel::new(&program, &table).unwrap();
    let u = vec![0.1; model.dim()];
    c.bench_function("eight schools log joint gradient", |bch| bch.iter(|| model.gradient(black_box(&u))));

    let cfg = SamplerConfig { warmup: 300, draws: 300, ..SamplerConfig::default() };
    let mut group = c.benchmark_group("sampling");
    group.sample_size(10);
    group.bench_function("eight schools, 4 x 600 iterations", |bch| bch.iter(|| score_model(&program, &table, &cfg).unwrap()));
    group.finish();

    let ll: Vec<Vec<f64>> = (0..4000).map(|s| (0..50).map(|i| -1.0 - 0.001 * ((s * 7 + i * 13) % 97) as f64).collect()).collect();
    c.bench_function("psis-loo, 4000 draws x 50 observations", |bch| bch.iter(|| psis_loo(black_box(&ll)).unwrap()));
}

fn ode(c: &mut Criterion) {
    let data = LvPreset::oscillating().simulate(0).unwrap().data;
    for (name, spec) in [("standard lv", STANDARD_LV), ("hybrid lv", HYBRID_MULTIPLICATIVE)] {
        let model = OdeModel::parse(spec).unwrap();
        let theta = model.initial_params(0);
        c.bench_function(&format!("rk4 loss + gradient, {name}"), |bch| {
            bch.iter(|| model.loss_grad(black_box(&theta), &data, 0.01).unwrap())
        });
    }
}

criterion_group!(benches, autodiff, gp, ppl, ode);
criterion_main!(benches);

use std::hint::black_box;

use bridge_rdd::inference::{bootstrap, BootstrapOptions};
use bridge_rdd::minimax::{fit_outcome_bridge, fit_treatment_bridge, MomentProblem};
use bridge_rdd::netfn::{FunctionModel, ModelKind};
use bridge_rdd::rng;
use bridge_rdd::simstudy::{Dgp, Setting};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn moment_problems(c: &mut Criterion) {
    let mut group = c.benchmark_group("moment_problem");
    for n in [500, 1000] {
        let (main, aux) = Setting::Two.generate(n, n, 1).unwrap();
        let cfg = Setting::Two.default_config();
        group.bench_with_input(BenchmarkId::new("build_outcome", n), &n, |b, _| {
            b.iter(|| MomentProblem::outcome(black_box(&main), black_box(&aux), &cfg).unwrap())
        });
        let problem = MomentProblem::treatment(&aux, &cfg).unwrap();
        let model = FunctionModel::init(ModelKind::TwoLayerRelu, cfg.hidden_size, &mut rng::stream(3, 0)).unwrap();
        group.bench_with_input(BenchmarkId::new("treatment_loss_grad", n), &n, |b, _| {
            b.iter(|| problem.loss_grad(black_box(&model)))
        });
    }
    group.finish();
}

fn fits(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(20);
    for setting in [Setting::One, Setting::Two] {
        let (main, aux) = setting.generate(1000, 1000, 2).unwrap();
        let cfg = setting.default_config();
        group.bench_function(format!("{}/outcome", setting.name()), |b| {
            b.iter(|| fit_outcome_bridge(black_box(&main), black_box(&aux), &cfg).unwrap())
        });
        group.bench_function(format!("{}/treatment", setting.name()), |b| {
            b.iter(|| fit_treatment_bridge(black_box(&aux), &cfg).unwrap())
        });
    }
    group.finish();
}

fn bootstraps(c: &mut Criterion) {
    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    let (main, aux) = Setting::One.generate(500, 500, 4).unwrap();
    let cfg = Setting::One.default_config();
    let opts = BootstrapOptions { replicates: 20, seed: 5, ..BootstrapOptions::default() };
    group.bench_function("setting1/n500/B20", |b| b.iter(|| bootstrap(&main, &aux, &cfg, &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, moment_problems, fits, bootstraps);
criterion_main!(benches);

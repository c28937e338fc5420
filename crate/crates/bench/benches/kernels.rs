use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hclt_core::hermite::to_chaos_coefficients;
use hclt_core::limit::{contraction_norm, limit_covariance_chaos};
use hclt_core::{hermite_eval, BetaFn, OperatorG, ProcessModel};

fn hermite(c: &mut Criterion) {
    c.bench_function("hermite_eval deg 0..=12", |b| {
        b.iter(|| (0..=12).map(|n| hermite_eval(n, black_box(0.73))).sum::<f64>())
    });
}

fn paths(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_path");
    let ar = ProcessModel::arh1(vec![0.6, 0.3, 0.1], vec![1.0, 0.5, 0.25]).unwrap();
    let power = ProcessModel::decoupled(BetaFn::Power(1.5), vec![1.0, 0.5, 0.25]).unwrap();
    for n in [1024, 8192] {
        group.bench_with_input(BenchmarkId::new("arh1", n), &n, |b, &n| b.iter(|| ar.simulate_path(n, 7).unwrap()));
        group.bench_with_input(BenchmarkId::new("power", n), &n, |b, &n| b.iter(|| power.simulate_path(n, 7).unwrap()));
    }
    group.finish();
}

fn covariance(c: &mut Criterion) {
    let model = ProcessModel::arh1(vec![0.5, 0.3, 0.2, 0.1], vec![1.0, 0.5, 0.25, 0.125]).unwrap();
    let chaos = to_chaos_coefficients(&OperatorG::sample_covariance(&model).closed_form(2).unwrap());
    c.bench_function("limit_covariance_chaos D=4 V=64", |b| {
        b.iter(|| limit_covariance_chaos(&chaos, &model, 64).unwrap())
    });
}

fn contraction(c: &mut Criterion) {
    let mut group = c.benchmark_group("contraction_norm");
    let model = ProcessModel::arh1(vec![0.5], vec![1.0]).unwrap();
    let chaos = to_chaos_coefficients(&OperatorG::eigenvalue(&model, 1).unwrap().closed_form(2).unwrap());
    for n in [256, 2048] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| contraction_norm(&chaos, &model, 2, 2, 1, n, 32).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, hermite, paths, covariance, contraction);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gmmu_bench::Fixture;
use gmmu_core::endmembers::{estimate_pixel_endmembers, EndmemberEmOptions};
use gmmu_core::gem::{evaluate, m_step_gradients, pgd_update_abundances, update_means, RowSteps, StepControl, Surrogate};
use gmmu_core::{gmm_fit_em, EmOptions, NoiseModel};
use std::hint::black_box;

fn objective(c: &mut Criterion) {
    let f = Fixture::supervised(0, 10);
    c.bench_function("objective_and_responsibilities", |b| {
        b.iter(|| evaluate(black_box(&f.pixels), &f.a, &f.table, &f.noise, &f.graph).unwrap())
    });
}

fn m_step(c: &mut Criterion) {
    let f = Fixture::supervised(0, 10);
    let sur = Surrogate {
        pixels: &f.pixels,
        noise: &f.noise,
        gamma: &f.gamma,
        graph: &f.graph,
    };
    let ctl = StepControl::default();
    let mut group = c.benchmark_group("m_step");
    group.bench_function("gradients", |b| b.iter(|| m_step_gradients(black_box(&sur), &f.a, &f.table).unwrap()));
    group.bench_function("abundances", |b| {
        b.iter(|| {
            let mut steps = RowSteps::default();
            pgd_update_abundances(black_box(&sur), &f.a, &f.table, f.rows(), f.cols(), &mut steps, &ctl).unwrap()
        })
    });
    group.bench_function("means", |b| b.iter(|| update_means(black_box(&sur), &f.a, &f.table, &ctl).unwrap()));
    group.finish();
}

fn pixel_endmembers(c: &mut Criterion) {
    let f = Fixture::supervised(0, 10);
    let noise = NoiseModel::isotropic(f.bundle.cube.n_bands(), 0.001).unwrap();
    let opts = EndmemberEmOptions::default();
    c.bench_function("per_pixel_endmembers", |b| {
        b.iter(|| estimate_pixel_endmembers(&f.bundle.cube, black_box(&f.bundle.abundances), &f.bundle.theta, &noise, &opts).unwrap())
    });
}

fn em(c: &mut Criterion) {
    let f = Fixture::supervised(0, 10);
    let mut group = c.benchmark_group("gmm_em");
    group.sample_size(10);
    let samples = f.bundle.plane(1);
    for k in [1, 2, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| gmm_fit_em(black_box(&samples), k, 7, &EmOptions::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, objective, m_step, pixel_endmembers, em);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fps_skew::calibration::solve_raking;
use fps_skew::variance::variance_hajek;
use fps_skew::{
    hajek_cdf, infer, montecarlo, Auxiliary, CdfBasis, EstimatorKind, InferenceOptions, SampleView,
    SolverOptions, Target, VarianceMethod,
};
use fps_skew_bench::{population, simulation_config, stratified_design};

fn point_estimates(c: &mut Criterion) {
    let pop = population(800);
    let mut group = c.benchmark_group("hajek_cdf");
    for n in [40, 80, 400] {
        let design = stratified_design(&pop, n);
        let sample = design.draw(1);
        group.bench_with_input(BenchmarkId::new("b3", n), &sample, |b, s| {
            b.iter(|| hajek_cdf(s, pop.y()).unwrap().b3().unwrap())
        });
        group.bench_with_input(BenchmarkId::new("b2", n), &sample, |b, s| {
            b.iter(|| hajek_cdf(s, pop.y()).unwrap().b2(0.25).unwrap())
        });
    }
    group.finish();
}

fn raking(c: &mut Criterion) {
    let pop = population(800);
    let (n_pop, sum_x) = (pop.len() as f64, pop.x().iter().sum::<f64>());
    let mut group = c.benchmark_group("raking");
    for n in [40, 80, 400] {
        let design = stratified_design(&pop, n);
        let sample = design.draw(2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &sample, |b, s| {
            b.iter(|| solve_raking(s, pop.x(), n_pop, sum_x, &SolverOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn syg_variance(c: &mut Criterion) {
    let pop = population(800);
    let mut group = c.benchmark_group("syg_variance");
    for n in [40, 80, 400] {
        let design = stratified_design(&pop, n);
        let sample = design.draw(3);
        let g = sample.gather(pop.y());
        group.bench_with_input(BenchmarkId::from_parameter(n), &g, |b, g| {
            b.iter(|| variance_hajek(&sample, black_box(g), 800.0, VarianceMethod::Syg))
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let pop = population(800);
    let design = stratified_design(&pop, 80);
    let sample = design.draw(4);
    let view = SampleView::new(&sample, pop.y(), Auxiliary::from_population(&pop), SolverOptions::default());
    let opts = InferenceOptions::default();
    let mut group = c.benchmark_group("infer");
    for basis in [CdfBasis::Hajek, CdfBasis::Calibration] {
        let kind = EstimatorKind::new(basis, Target::B3);
        group.bench_function(kind.to_string(), |b| b.iter(|| infer(&view, kind, &opts).unwrap()));
    }
    group.finish();
}

fn replication(c: &mut Criterion) {
    let cfg = simulation_config(10);
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    group.bench_function("10_replications_n80", |b| b.iter(|| montecarlo::run(&cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, point_estimates, raking, syg_variance, inference, replication);
criterion_main!(benches);

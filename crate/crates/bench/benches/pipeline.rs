use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use txrl_bench::{cohort, fitted};
use txrl_core::{
    bootstrap_ensemble, estimate_mdp, fit_pipeline, mdp::flatten, solve_q_optimal, BootstrapConfig,
    PipelineConfig, SolverConfig, N_ACTIONS,
};

fn simulate(c: &mut Criterion) {
    c.bench_function("simulate_2000", |b| b.iter(|| cohort(black_box(2000))));
}

fn fit(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit_pipeline");
    g.sample_size(10);
    for n in [500, 2000] {
        let ds = cohort(n);
        let cfg = PipelineConfig::simulated(0);
        g.bench_with_input(BenchmarkId::from_parameter(n), &ds, |b, ds| {
            b.iter(|| fit_pipeline(ds, &cfg).unwrap())
        });
    }
    g.finish();
}

fn solve(c: &mut Criterion) {
    let (_, fit) = fitted(2000);
    let ns = fit.bundle.n_states();
    let mdp = estimate_mdp(flatten(&fit.tagged), ns, N_ACTIONS).unwrap();
    let cfg = SolverConfig::default();
    c.bench_function("value_iteration", |b| b.iter(|| solve_q_optimal(black_box(&mdp), &cfg).unwrap()));
}

fn bootstrap(c: &mut Criterion) {
    let (_, fit) = fitted(2000);
    let ns = fit.bundle.n_states();
    let cfg = BootstrapConfig {
        iterations: 50,
        ..Default::default()
    };
    let mut g = c.benchmark_group("bootstrap");
    g.sample_size(10);
    g.bench_function("b50", |b| {
        b.iter(|| bootstrap_ensemble(&fit.tagged, ns, N_ACTIONS, &SolverConfig::default(), &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, simulate, fit, solve, bootstrap);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use irs_uav::ao::{initial_solution, run_from, AoOptions, Variant};
use irs_uav::irs::{solve_irs, IrsOptions};
use irs_uav::power::solve_power;
use irs_uav::ps::solve_ps;
use irs_uav::scenario::{Params, Scenario, Solution};
use irs_uav::trajectory::{solve_trajectory_sic, Fixed, Point, TrajectoryOptions};
use irs_uav::ChannelMeans;

fn instance(m: usize) -> (Scenario, Solution) {
    let params = Params::default()
        .with("K", 4.0)
        .and_then(|p| p.with("M", m as f64))
        .and_then(|p| p.with("N", 30.0))
        .and_then(|p| p.with("T", 30.0))
        .expect("valid parameters");
    let sc = irs_uav::generate_scenario(1, &params).expect("scenario");
    let sol = initial_solution(&sc, Variant::Proposed).expect("initial point");
    (sc, sol)
}

fn subproblems(c: &mut Criterion) {
    let (sc, sol) = instance(8);
    let means = ChannelMeans::compute(&sc, &sol.q, &sol.theta).unwrap();
    let mut g = c.benchmark_group("subproblem");
    g.sample_size(10);

    g.bench_function("trajectory", |b| {
        let fixed = Fixed { p: &sol.p, rho: &sol.rho, theta: &sol.theta };
        let start = Point { q: sol.q.clone(), psi: sol.psi.clone() };
        b.iter(|| solve_trajectory_sic(&sc, fixed, black_box(&start), &TrajectoryOptions::default()).unwrap())
    });
    g.bench_function("split", |b| b.iter(|| solve_ps(&sc, black_box(&means), &sol.p).unwrap()));
    g.bench_function("power", |b| b.iter(|| solve_power(&sc, &means, &sol.psi, &sol.rho, black_box(&sol.p)).unwrap()));
    g.bench_function("phases", |b| {
        b.iter(|| solve_irs(&sc, &means, &sol.p, &sol.rho, &sol.psi, black_box(&sol.theta), &IrsOptions::default()).unwrap())
    });
    g.finish();
}

// per-iteration cost against the number of elements
fn ao_iteration(c: &mut Criterion) {
    let mut g = c.benchmark_group("ao_iteration");
    g.sample_size(10);
    for m in [8, 16, 32] {
        let (sc, sol) = instance(m);
        let opts = AoOptions { max_iters: 1, ..AoOptions::for_scenario(&sc) };
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| run_from(&sc, Variant::Proposed, black_box(sol.clone()), &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, subproblems, ao_iteration);
criterion_main!(benches);

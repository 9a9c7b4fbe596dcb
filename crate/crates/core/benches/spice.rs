use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use spice_core::model::{
    build_dictionary, compute_weights, scaled_atoms, simulate_measurement, uniform_frequency_grid,
    uniform_time_samples, ActiveAtom, Dictionary, Measurement,
};
use spice_core::sparse_solvers::{solve_constrained_l1, SolverConfig};
use spice_core::spice::{assemble_covariance, NoiseModel, SpiceConfig, SpiceProblem};
use spice_core::Execution;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn instance(n: usize, grid: usize) -> (Dictionary, Measurement) {
    let t = uniform_time_samples(n, 200.0, 1);
    let dict = build_dictionary(&t, &uniform_frequency_grid(grid)).unwrap();
    let active = [
        ActiveAtom {
            index: grid / 7,
            amplitude: 3.0,
        },
        ActiveAtom {
            index: grid / 3,
            amplitude: 10.0,
        },
    ];
    let y = simulate_measurement(&dict, &active, &vec![0.25; n], 1).unwrap();
    (dict, y)
}

fn covariance(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble_covariance");
    for (n, grid) in [(50, 200), (100, 1000)] {
        let (dict, y) = instance(n, grid);
        let prob = SpiceProblem::new(&dict, &y).unwrap();
        let p = prob.initial_powers(&SpiceConfig::default()).unwrap();
        for exec in MODES {
            group.bench_with_input(
                BenchmarkId::new(format!("{exec:?}"), format!("{n}x{grid}")),
                &p,
                |b, p| b.iter(|| assemble_covariance(&dict, p, exec).unwrap()),
            );
        }
    }
    group.finish();
}

fn spice_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("spice_step");
    group.sample_size(20);
    for (n, grid) in [(50, 200), (100, 1000)] {
        let (dict, y) = instance(n, grid);
        let prob = SpiceProblem::new(&dict, &y).unwrap();
        for exec in MODES {
            let cfg = SpiceConfig {
                exec,
                ..SpiceConfig::default()
            };
            let state = prob.initial_state(&cfg).unwrap();
            group.bench_with_input(
                BenchmarkId::new(format!("{exec:?}"), format!("{n}x{grid}")),
                &state,
                |b, s| b.iter(|| prob.step(s, &cfg).unwrap()),
            );
        }
    }
    group.finish();
}

fn lad_lasso(c: &mut Criterion) {
    let mut group = c.benchmark_group("lad_lasso_200_iters");
    group.sample_size(10);
    let (dict, y) = instance(50, 200);
    let w = compute_weights(&dict, &y).unwrap();
    let scaled = scaled_atoms(&dict, &w).unwrap();
    for exec in MODES {
        let cfg = SolverConfig {
            max_iters: 200,
            exec,
            ..SolverConfig::default()
        };
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| solve_constrained_l1(&scaled, &y, NoiseModel::Heteroscedastic, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, covariance, spice_step, lad_lasso);
criterion_main!(benches);

//! Wall-clock comparison of SPICE iterations and the L1 solver over sizes.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use spice_core::model::scaled_atoms;
use spice_core::sparse_solvers::solve_constrained_l1;
use spice_core::spice::SpiceProblem;
use spice_core::Execution;

use crate::config::{ExperimentConfig, NoiseVariance};
use crate::error::CliError;
use crate::experiment::prepare_measurement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_samples: usize,
    pub grid_size: usize,
    pub execution: Execution,
    pub spice_iters: usize,
    pub spice_secs: f64,
    pub spice_secs_per_iter: f64,
    pub lasso_secs: f64,
    pub lasso_iterations: usize,
    pub lasso_converged: bool,
    /// `ok`, or the error that stopped this size.
    pub status: String,
}

fn failed(n: usize, grid: usize, cfg: &ExperimentConfig, err: &CliError) -> BenchRow {
    BenchRow {
        n_samples: n,
        grid_size: grid,
        execution: cfg.spice_config().exec,
        spice_iters: 0,
        spice_secs: f64::NAN,
        spice_secs_per_iter: f64::NAN,
        lasso_secs: f64::NAN,
        lasso_iterations: 0,
        lasso_converged: false,
        status: err.to_string(),
    }
}

/// Times `cfg.spice_iters` SPICE steps and one Lasso solve for every size.
///
/// The configured lines are kept when they fit on the grid and dropped
/// otherwise. `run_lasso = false` skips the solver (its columns stay `NaN`).
/// Numeric failures are recorded in the row and the run moves on.
pub fn run_benchmark(
    sizes: &[(usize, usize)],
    cfg: &ExperimentConfig,
    run_lasso: bool,
) -> Result<Vec<BenchRow>, CliError> {
    if sizes.is_empty() {
        return Err(CliError::Config("no benchmark sizes given".into()));
    }
    if let Some(&(n, g)) = sizes.iter().find(|&&(n, g)| n == 0 || g == 0) {
        return Err(CliError::Config(format!(
            "benchmark size ({n}, {g}) is empty"
        )));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &(n, grid) in sizes {
        let size_cfg = ExperimentConfig {
            n_samples: n,
            grid_size: grid,
            active: cfg.active.iter().copied().filter(|a| a.0 <= grid).collect(),
            noise_variance: match &cfg.noise_variance {
                NoiseVariance::PerSample(v) => {
                    NoiseVariance::Common(v.iter().sum::<f64>() / v.len().max(1) as f64)
                }
                common => common.clone(),
            },
            measurement_csv: None,
            spice_rel_tol: 0.0,
            ..cfg.clone()
        };
        match bench_one(&size_cfg, run_lasso) {
            Ok(row) => rows.push(row),
            Err(e @ CliError::Config(_)) => return Err(e),
            Err(e) => rows.push(failed(n, grid, &size_cfg, &e)),
        }
    }
    Ok(rows)
}

fn bench_one(cfg: &ExperimentConfig, run_lasso: bool) -> Result<BenchRow, CliError> {
    use crate::error::Stage;
    let (dict, y) = prepare_measurement(cfg)?;
    let spice_cfg = cfg.spice_config();
    let problem = SpiceProblem::new(&dict, &y).stage("weights")?;
    let t = Instant::now();
    let run = problem.run(&spice_cfg).stage("spice")?;
    let spice_secs = t.elapsed().as_secs_f64();
    let iters = run.state.iteration.max(1);

    let (lasso_secs, lasso_iterations, lasso_converged) = if run_lasso {
        let t = Instant::now();
        let scaled = scaled_atoms(&dict, problem.weights()).stage("scaling atoms")?;
        let sol = solve_constrained_l1(&scaled, &y, cfg.noise_model(), &cfg.solver_config())
            .stage("lasso")?;
        (t.elapsed().as_secs_f64(), sol.iterations, sol.converged)
    } else {
        (f64::NAN, 0, false)
    };
    Ok(BenchRow {
        n_samples: cfg.n_samples,
        grid_size: cfg.grid_size,
        execution: spice_cfg.exec,
        spice_iters: run.state.iteration,
        spice_secs,
        spice_secs_per_iter: spice_secs / iters as f64,
        lasso_secs,
        lasso_iterations,
        lasso_converged,
        status: "ok".into(),
    })
}

pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

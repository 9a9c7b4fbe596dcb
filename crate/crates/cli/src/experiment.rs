//! One simulate / SPICE / Lasso pass and its outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use spice_core::equivalence::{lasso_amplitudes, lasso_to_powers, SUPPORT_THRESHOLD};
use spice_core::model::{
    build_dictionary, read_measurement_csv, scaled_atoms, simulate_measurement,
    uniform_frequency_grid, uniform_time_samples, write_measurement_csv, ActiveAtom, Dictionary,
    Measurement,
};
use spice_core::sparse_solvers::solve_constrained_l1;
use spice_core::spice::{evaluate_g, NoiseModel, PowerEstimate, SpiceProblem};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Stage};

/// One row of `spectrum.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    /// Grid number `k`, frequency `2 pi k / grid_size`.
    pub index: usize,
    pub omega_rad: f64,
    pub p_spice: f64,
    pub p_equiv: f64,
    pub ctilde_modulus: f64,
    pub sqrt_p_spice: f64,
    pub sqrt_p_equiv: f64,
    pub amp_spice: f64,
    pub amp_equiv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub power: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub measurement_secs: f64,
    pub spice_secs: f64,
    pub lasso_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub n_samples: usize,
    pub variant: NoiseModel,
    /// Grid numbers whose normalized power `w_k p_k` exceeds the threshold.
    pub support_spice: Vec<usize>,
    pub support_lasso: Vec<usize>,
    /// Largest signal powers, as many as there are configured lines (at
    /// least one).
    pub peaks_spice: Vec<Peak>,
    pub peaks_lasso: Vec<Peak>,
    pub g_spice: f64,
    pub g_lasso: f64,
    /// Mean noise power of each route.
    pub noise_spice: f64,
    pub noise_lasso: f64,
    pub spice_iterations: usize,
    pub spice_converged: bool,
    pub lasso_iterations: usize,
    pub lasso_converged: bool,
    #[serde(skip)]
    pub spectra: Vec<SpectrumRow>,
    #[serde(skip)]
    pub timings: Timings,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Time samples, dictionary and measurement described by `cfg`.
pub fn prepare_measurement(cfg: &ExperimentConfig) -> Result<(Dictionary, Measurement), CliError> {
    cfg.validate()?;
    let grid = uniform_frequency_grid(cfg.grid_size);
    if let Some(path) = &cfg.measurement_csv {
        let (t, y) = read_measurement_csv(path).stage("reading measurement")?;
        let dict = build_dictionary(&t, &grid).stage("building dictionary")?;
        return Ok((dict, y));
    }
    let t = uniform_time_samples(cfg.n_samples, cfg.time_horizon, cfg.seed);
    let dict = build_dictionary(&t, &grid).stage("building dictionary")?;
    let active: Vec<ActiveAtom> = cfg
        .active
        .iter()
        .map(|&(k, amplitude)| ActiveAtom {
            index: k - 1,
            amplitude,
        })
        .collect();
    let y = simulate_measurement(
        &dict,
        &active,
        &cfg.noise_variance.expand(cfg.n_samples),
        cfg.seed,
    )
    .stage("simulating measurement")?;
    Ok((dict, y))
}

fn top_peaks(p: &PowerEstimate, amplitudes: &[f64], count: usize) -> Vec<Peak> {
    let mut order: Vec<usize> = (0..p.n_signal()).collect();
    order.sort_by(|&a, &b| p.signal()[b].total_cmp(&p.signal()[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(count)
        .map(|k| Peak {
            index: k + 1,
            power: p.signal()[k],
            amplitude: amplitudes[k],
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let t0 = Instant::now();
    let (dict, y) = prepare_measurement(cfg)?;
    let measurement_secs = t0.elapsed().as_secs_f64();
    let variant = cfg.noise_model();

    let t1 = Instant::now();
    let problem = SpiceProblem::new(&dict, &y).stage("weights")?;
    let spice_cfg = cfg.spice_config();
    let run = problem.run(&spice_cfg).stage("spice")?;
    let spice_secs = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let w = problem.weights();
    let scaled = scaled_atoms(&dict, w).stage("scaling atoms")?;
    let sol = solve_constrained_l1(&scaled, &y, variant, &cfg.solver_config()).stage("lasso")?;
    let p_equiv = lasso_to_powers(&sol, &dict, &y, variant).stage("power transform")?;
    let lasso_secs = t2.elapsed().as_secs_f64();

    let g_lasso = evaluate_g(&dict, &y, w, &p_equiv, &spice_cfg.jitter, spice_cfg.exec)
        .stage("evaluating g")?;
    let p_spice = &run.state.powers;
    let amp_spice: Vec<f64> = run.state.amplitudes().iter().map(|a| a.norm()).collect();
    let amp_equiv: Vec<f64> = lasso_amplitudes(&sol, &dict, &y)
        .stage("amplitudes")?
        .iter()
        .map(|a| a.norm())
        .collect();

    let spectra: Vec<SpectrumRow> = (0..dict.n_atoms())
        .map(|k| SpectrumRow {
            index: k + 1,
            omega_rad: dict.freq_grid()[k],
            p_spice: p_spice.signal()[k],
            p_equiv: p_equiv.signal()[k],
            ctilde_modulus: sol.coefficients.c_tilde[k].norm(),
            sqrt_p_spice: p_spice.signal()[k].sqrt(),
            sqrt_p_equiv: p_equiv.signal()[k].sqrt(),
            amp_spice: amp_spice[k],
            amp_equiv: amp_equiv[k],
        })
        .collect();
    let n_peaks = cfg.active.len().max(1);
    let one_based = |v: Vec<usize>| v.into_iter().map(|k| k + 1).collect::<Vec<_>>();

    Ok(RunReport {
        config: cfg.clone(),
        n_samples: dict.n_samples(),
        variant,
        support_spice: one_based(p_spice.signal_support(w, SUPPORT_THRESHOLD)),
        support_lasso: one_based(p_equiv.signal_support(w, SUPPORT_THRESHOLD)),
        peaks_spice: top_peaks(p_spice, &amp_spice, n_peaks),
        peaks_lasso: top_peaks(&p_equiv, &amp_equiv, n_peaks),
        g_spice: run.state.g_value,
        g_lasso,
        noise_spice: mean(p_spice.noise()),
        noise_lasso: mean(p_equiv.noise()),
        spice_iterations: run.state.iteration,
        spice_converged: run.state.converged,
        lasso_iterations: sol.iterations,
        lasso_converged: sol.converged,
        spectra,
        timings: Timings {
            measurement_secs,
            spice_secs,
            lasso_secs,
        },
    })
}

/// Writes `spectrum.csv`, `report.json` and `timings.json` into `dir`.
/// Only the timings differ between runs with the same configuration.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let spectrum = dir.join("spectrum.csv");
    let mut w = csv::Writer::from_path(&spectrum)?;
    for row in &report.spectra {
        w.serialize(row)?;
    }
    w.flush()?;
    let json = dir.join("report.json");
    fs::write(&json, report.to_json())?;
    let timings = dir.join("timings.json");
    fs::write(
        &timings,
        serde_json::to_string_pretty(&report.timings).expect("timings serialize"),
    )?;
    Ok(vec![spectrum, json, timings])
}

/// Writes the measurement CSV and the ground truth of a simulated run.
pub fn write_simulation(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (dict, y) = prepare_measurement(cfg)?;
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("measurement.csv");
    write_measurement_csv(&csv_path, dict.time_samples(), &y).stage("writing measurement")?;
    let mut out = vec![csv_path];
    if let Some(truth) = &y.ground_truth {
        #[derive(Serialize)]
        struct Line {
            index: usize,
            amplitude: f64,
            phase: f64,
        }
        let lines: Vec<Line> = truth
            .active
            .iter()
            .zip(&truth.phases)
            .map(|(a, &phase)| Line {
                index: a.index + 1,
                amplitude: a.amplitude,
                phase,
            })
            .collect();
        let path = dir.join("truth.json");
        let body = serde_json::json!({
            "seed": y.seed,
            "lines": lines,
            "noise_variances": truth.noise_variances,
        });
        fs::write(
            &path,
            serde_json::to_string_pretty(&body).expect("truth serializes"),
        )?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n_samples: 12,
            grid_size: 40,
            active: vec![(7, 2.0)],
            noise_variance: crate::config::NoiseVariance::Common(0.05),
            spice_iters: 2000,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn spectrum_has_one_row_per_grid_point() {
        let report = run_experiment(&small()).unwrap();
        assert_eq!(report.spectra.len(), 40);
        assert_eq!(report.spectra[0].index, 1);
        assert!((report.spectra[39].omega_rad - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!(report
            .spectra
            .iter()
            .all(|r| r.p_spice.is_finite() && r.p_equiv.is_finite() && r.amp_spice.is_finite()));
        assert_eq!(report.peaks_spice[0].index, 7);
        assert_eq!(report.peaks_lasso[0].index, 7);
    }

    #[test]
    fn reports_are_reproducible() {
        let a = run_experiment(&small()).unwrap();
        let b = run_experiment(&small()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.spectra, b.spectra);
    }

    #[test]
    fn ingests_written_measurement() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        write_simulation(&cfg, dir.path()).unwrap();
        let from_file = ExperimentConfig {
            measurement_csv: Some(dir.path().join("measurement.csv")),
            active: vec![],
            ..cfg.clone()
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&from_file).unwrap();
        assert_eq!(a.g_spice, b.g_spice);
        assert_eq!(a.support_spice, b.support_spice);
    }

    #[test]
    fn bad_measurement_file_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.csv");
        fs::write(&path, "index,t,re,im\n1,0.0,abc,1.0\n").unwrap();
        let cfg = ExperimentConfig {
            measurement_csv: Some(path),
            ..small()
        };
        assert_eq!(run_experiment(&cfg).unwrap_err().exit_code(), 2);
    }
}

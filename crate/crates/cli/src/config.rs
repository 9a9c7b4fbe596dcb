//! Experiment configuration.
//!
//! A flat TOML table; every key is optional and defaults to the reference
//! experiment (100 samples on `[0, 200]`, a 1000-point grid, three lines at
//! grid numbers 145, 310 and 315, noise variance 0.25). Grid numbers are
//! 1-based: number `k` is the frequency `2 pi k / grid_size`.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use spice_core::sparse_solvers::SolverConfig;
use spice_core::spice::{NoiseModel, SpiceConfig};
use spice_core::Execution;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Free per-sample noise variances (LAD-Lasso route).
    #[serde(alias = "heteroscedastic")]
    Hetero,
    /// One common noise variance (square-root Lasso route).
    #[serde(alias = "equal_variance")]
    Equal,
}

impl From<Variant> for NoiseModel {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Hetero => NoiseModel::Heteroscedastic,
            Variant::Equal => NoiseModel::EqualVariance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseVariance {
    Common(f64),
    PerSample(Vec<f64>),
}

impl NoiseVariance {
    pub fn expand(&self, n: usize) -> Vec<f64> {
        match self {
            NoiseVariance::Common(v) => vec![*v; n],
            NoiseVariance::PerSample(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_samples: usize,
    pub grid_size: usize,
    pub time_horizon: f64,
    /// `(grid number, amplitude)` pairs.
    pub active: Vec<(usize, f64)>,
    pub noise_variance: NoiseVariance,
    pub variant: Variant,
    pub seed: u64,
    /// SPICE iterations for `run` and `bench`.
    pub spice_iters: usize,
    /// SPICE iteration cap for `certify`, which runs to convergence.
    pub certify_iters: usize,
    pub spice_rel_tol: f64,
    pub solver_max_iters: usize,
    pub solver_abs_tol: f64,
    pub solver_rel_tol: f64,
    pub output_dir: PathBuf,
    /// Read `t` and `y` from this file instead of simulating.
    pub measurement_csv: Option<PathBuf>,
    /// `(n_samples, grid_size)` pairs for `bench`.
    pub bench_sizes: Vec<(usize, usize)>,
    /// Threading of the dense kernels; timings are only comparable in
    /// `sequential` mode.
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            grid_size: 1000,
            time_horizon: 200.0,
            active: vec![(145, 3.0), (310, 10.0), (315, 10.0)],
            noise_variance: NoiseVariance::Common(0.25),
            variant: Variant::Hetero,
            seed: 1,
            spice_iters: 100,
            certify_iters: 5000,
            spice_rel_tol: 1e-8,
            solver_max_iters: 50_000,
            solver_abs_tol: 1e-9,
            solver_rel_tol: 1e-7,
            output_dir: PathBuf::from("out"),
            measurement_csv: None,
            bench_sizes: vec![(50, 200), (100, 1000)],
            execution: Execution::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn noise_model(&self) -> NoiseModel {
        self.variant.into()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.measurement_csv.is_none() && self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        if self.grid_size == 0 {
            return bad("grid_size must be at least 1".into());
        }
        if !(self.time_horizon > 0.0 && self.time_horizon.is_finite()) {
            return bad(format!(
                "time_horizon must be positive, got {}",
                self.time_horizon
            ));
        }
        for &(k, amp) in &self.active {
            if k == 0 || k > self.grid_size {
                return bad(format!(
                    "active grid number {k} outside 1..={}",
                    self.grid_size
                ));
            }
            if !(amp >= 0.0 && amp.is_finite()) {
                return bad(format!(
                    "amplitude {amp} at grid number {k} must be nonnegative"
                ));
            }
        }
        let mut seen: Vec<usize> = self.active.iter().map(|a| a.0).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return bad("active grid numbers must be distinct".into());
        }
        match &self.noise_variance {
            NoiseVariance::Common(v) if !(*v > 0.0 && v.is_finite()) => {
                return bad(format!("noise_variance must be positive, got {v}"));
            }
            NoiseVariance::PerSample(v) => {
                if self.measurement_csv.is_none() && v.len() != self.n_samples {
                    return bad(format!(
                        "noise_variance has {} entries for {} samples",
                        v.len(),
                        self.n_samples
                    ));
                }
                if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                    return bad("noise variances must be positive".into());
                }
            }
            _ => {}
        }
        if self.spice_iters == 0 || self.certify_iters == 0 || self.solver_max_iters == 0 {
            return bad("iteration limits must be at least 1".into());
        }
        for (name, v) in [
            ("spice_rel_tol", self.spice_rel_tol),
            ("solver_abs_tol", self.solver_abs_tol),
            ("solver_rel_tol", self.solver_rel_tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a nonnegative number"));
            }
        }
        Ok(())
    }

    pub fn spice_config(&self) -> SpiceConfig {
        SpiceConfig {
            rel_tol: self.spice_rel_tol,
            exec: self.execution,
            ..SpiceConfig::default()
                .with_variant(self.noise_model())
                .with_max_iters(self.spice_iters)
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.solver_max_iters,
            abs_tol: self.solver_abs_tol,
            rel_tol: self.solver_rel_tol,
            exec: self.execution,
            ..SolverConfig::default()
        }
    }
}

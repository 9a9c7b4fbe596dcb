use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spice_cli::bench::{run_benchmark, write_bench_csv};
use spice_cli::config::{ExperimentConfig, Variant};
use spice_cli::error::CliError;
use spice_cli::experiment::{prepare_measurement, run_experiment, write_outputs, write_simulation};
use spice_core::equivalence::{certify_equivalence, CertifyConfig};

#[derive(Parser)]
#[command(
    name = "spice",
    version,
    about = "SPICE and Lasso-type sparse spectral estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; missing keys take the reference defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    variant: Option<Variant>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// SPICE iterations (`run`, `bench`) or iteration cap (`certify`).
    #[arg(long, global = true)]
    iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a measurement and write measurement.csv and truth.json.
    Simulate,
    /// Run SPICE and the equivalent Lasso; write spectrum.csv and report.json.
    Run,
    /// Run SPICE to convergence and the Lasso route; write certify.json.
    Certify,
    /// Time SPICE iterations and the L1 solver over `bench_sizes`.
    Bench {
        /// Only time SPICE.
        #[arg(long)]
        no_lasso: bool,
    },
}

fn load(common: &Common, certify: bool) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(v) = common.variant {
        cfg.variant = v;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(iters) = common.iters {
        if certify {
            cfg.certify_iters = iters;
        } else {
            cfg.spice_iters = iters;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn list(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

/// Grid numbers in CLI outputs are 1-based.
fn report_support(v: &serde_json::Value) -> serde_json::Value {
    v.as_array()
        .map(|a| a.iter().filter_map(|k| k.as_u64()).map(|k| k + 1).collect())
        .unwrap_or_default()
}

fn certify(cfg: &ExperimentConfig, dir: &Path) -> Result<(), CliError> {
    let (dict, y) = prepare_measurement(cfg)?;
    let certify_cfg = CertifyConfig {
        spice: cfg.spice_config().with_max_iters(cfg.certify_iters),
        exec: cfg.execution,
        ..CertifyConfig::default()
    };
    let report =
        certify_equivalence(&dict, &y, cfg.noise_model(), &certify_cfg).map_err(|source| {
            CliError::Numeric {
                stage: "certify",
                source,
            }
        })?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join("certify.json");
    let mut json = serde_json::to_value(&report).expect("report serializes");
    for key in ["support_spice", "support_lasso"] {
        json[key] = report_support(&json[key]);
    }
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&json).expect("report serializes"),
    )?;
    println!(
        "g_spice {:.12e}  g_lasso {:.12e}  relative gap {:.3e}  supports {}",
        report.g_spice,
        report.g_lasso,
        report.g_relative_gap(),
        if report.supports_agree() {
            "agree"
        } else {
            "differ"
        }
    );
    list(&[path]);
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(&cli.common, matches!(cli.command, Command::Certify))?;
    let dir = cfg.output_dir.clone();
    match &cli.command {
        Command::Simulate => list(&write_simulation(&cfg, &dir)?),
        Command::Run => {
            let report = run_experiment(&cfg)?;
            let fmt = |peaks: &[spice_cli::experiment::Peak]| {
                peaks
                    .iter()
                    .map(|p| p.index.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            println!(
                "spice peaks [{}]  lasso peaks [{}]",
                fmt(&report.peaks_spice),
                fmt(&report.peaks_lasso)
            );
            println!(
                "g_spice {:.12e}  g_lasso {:.12e}",
                report.g_spice, report.g_lasso
            );
            list(&write_outputs(&report, &dir)?);
        }
        Command::Certify => certify(&cfg, &dir)?,
        Command::Bench { no_lasso } => {
            let rows = run_benchmark(&cfg.bench_sizes, &cfg, !no_lasso)?;
            for r in &rows {
                println!(
                    "N {:>5}  grid {:>5}  spice {:.4} s/iter  lasso {:.3} s  {}",
                    r.n_samples, r.grid_size, r.spice_secs_per_iter, r.lasso_secs, r.status
                );
            }
            let path = dir.join("bench.csv");
            write_bench_csv(&rows, &path)?;
            list(&[path]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use irs_uav::experiment::{self, SweepSpec};
use irs_uav::scenario::Params;
use irs_uav::validation;
use irs_uav::Variant;

/// Exit status for an instance without a feasible point.
const EXIT_INFEASIBLE: u8 = 2;

#[derive(Parser)]
#[command(name = "irs-uav", version, about = "Trajectory, power, splitting and IRS phase design for a UAV SWIPT downlink")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one instance and write history.csv, trajectory.csv and run_summary.json.
    Run {
        /// TOML configuration; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "proposed")]
        variant: Variant,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a parameter sweep described by a TOML file.
    Sweep {
        #[arg(long = "sweep-spec")]
        sweep_spec: PathBuf,
        /// Overrides the output directory named in the spec.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical self-checks and print a JSON report.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the benchmark variants.
    Variants,
}

fn load_params(path: Option<&Path>) -> Result<Params> {
    let Some(path) = path else {
        return Ok(Params::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Params::from_toml_str(&text).map_err(|msg| anyhow::anyhow!("{}: {msg}", path.display()))
}

fn cmd_run(config: Option<&Path>, seed: Option<u64>, variant: Variant, out: &Path) -> Result<ExitCode> {
    let mut params = load_params(config)?;
    if let Some(s) = seed {
        params.seed = s;
    }
    match experiment::run_case(&params, variant, out) {
        Ok((_, history)) => {
            println!(
                "{variant}: sum-rate {:.6} after {} iterations ({}), max violation {:.2e}",
                history.objective(),
                history.iterations(),
                history.status.tag(),
                history.violations.max()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(e) if experiment::is_infeasible(&e) => {
            eprintln!("infeasible: {e}");
            Ok(ExitCode::from(EXIT_INFEASIBLE))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_sweep(spec_path: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let spec = SweepSpec::load(spec_path)?;
    let dir = out.map(Path::to_path_buf).or_else(|| spec.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let points = experiment::run_sweep(&spec, &dir, experiment::worker_count())?;
    for p in &points {
        println!("{}={} {:<18} mean {:.6} std {:.6} ({} seeds, {} failed)", spec.param, p.value, p.variant, p.mean, p.std, p.seeds, p.failures);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let sc = validation::small_scenario()?;
    let report = validation::verify_all(&sc, seed);
    let json = report.to_json();
    println!("{json}");
    if let Some(path) = out {
        std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    for c in report.failures() {
        eprintln!("FAIL {}: {:.3e} > {:.0e} ({})", c.name, c.measured, c.tolerance, c.detail);
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config, seed, variant, out } => cmd_run(config.as_deref(), seed, variant, &out),
        Cmd::Sweep { sweep_spec, out } => cmd_sweep(&sweep_spec, out.as_deref()),
        Cmd::Verify { seed, out } => cmd_verify(seed, out.as_deref()),
        Cmd::Variants => {
            for v in Variant::ALL {
                println!("{v}");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use dgd_cli::run::{execute, sweep};
use dgd_cli::scenario::{ExperimentKind, ProbeDirection, Scenario};
use dgd_core::selftest::run_selftest;

#[derive(Parser)]
#[command(name = "dgd", version, about = "Continuous-time distributed gradient descent experiments")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to the scenario's `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent trials and shots.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory; writes trajectory and consensus CSVs.
    Simulate,
    /// Monte Carlo classification of limits from uniform initializations.
    Basins {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Consensus residual against the quadrature envelope.
    Consensus,
    /// Stable-manifold chart of a saddle.
    Manifold {
        #[arg(long)]
        t0: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        grid_points: Option<usize>,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Bisection for the basin boundary along an eigendirection.
    Probe {
        /// `unstable` or `stable`.
        #[arg(long)]
        direction: Option<String>,
        #[arg(long)]
        tol_s: Option<f64>,
    },
    /// One run per value of a scalar config path.
    Sweep {
        /// Dotted config path, e.g. `schedule.tau_beta`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Oracle suite; exits nonzero on any failure.
    Selftest,
}

fn load(cli: &Cli) -> Result<Scenario> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!("--config <path> is required"))?;
    let mut scn = Scenario::load(path)?;
    if let Some(seed) = cli.seed {
        scn.seed = seed;
    }
    Ok(scn)
}

fn out_dir(cli: &Cli, scn: &Scenario) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(&scn.output))
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("configuring worker threads")?;
    }
    let (kind, name) = match &cli.command {
        Command::Selftest => {
            let report = run_selftest(cli.seed.unwrap_or(0));
            for c in &report.checks {
                println!(
                    "{} {:<44} worst {:.3e}  tol {:.1e}  cases {:>5}  {:.2}s",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.worst,
                    c.tolerance,
                    c.cases,
                    c.seconds
                );
            }
            println!("selftest finished in {:.2}s", report.seconds);
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("selftest.json"), serde_json::to_string_pretty(&report)?)?;
            }
            return Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Sweep { param, values } => {
            let values: Vec<String> = values.iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                println!("sweep: no values given, nothing to do");
                return Ok(ExitCode::SUCCESS);
            }
            let scn = load(&cli)?;
            let out = out_dir(&cli, &scn);
            let runs = sweep(&scn, param, &values, &out)?;
            println!("sweep: {} runs written to {}", runs.len(), out.display());
            return Ok(ExitCode::SUCCESS);
        }
        Command::Simulate => (ExperimentKind::Simulate, "simulate"),
        Command::Basins { .. } => (ExperimentKind::Basins, "basins"),
        Command::Consensus => (ExperimentKind::ConsensusReport, "consensus"),
        Command::Manifold { .. } => (ExperimentKind::Manifold, "manifold"),
        Command::Probe { .. } => (ExperimentKind::Probe, "probe"),
    };
    let mut scn = load(&cli)?;
    scn.kind = kind;
    match &cli.command {
        Command::Basins { trials: Some(t) } => scn.basins.trials = *t,
        Command::Manifold {
            t0,
            horizon,
            grid_points,
            radius,
            samples,
        } => {
            let m = &mut scn.manifold;
            m.t0 = t0.unwrap_or(m.t0);
            m.horizon = horizon.unwrap_or(m.horizon);
            m.grid_points = grid_points.unwrap_or(m.grid_points);
            m.radius = radius.unwrap_or(m.radius);
            m.samples = samples.unwrap_or(m.samples);
        }
        Command::Probe { direction, tol_s } => {
            if let Some(d) = direction {
                scn.probe.direction = match d.as_str() {
                    "unstable" => ProbeDirection::Unstable,
                    "stable" => ProbeDirection::Stable,
                    other => bail!("--direction: expected `unstable` or `stable`, got {other:?}"),
                };
            }
            scn.probe.tol_s = tol_s.unwrap_or(scn.probe.tol_s);
        }
        _ => {}
    }
    scn.validate()?;
    let out = out_dir(&cli, &scn);
    let summary = execute(&scn, &out, name)?;
    for (k, v) in &summary.metrics {
        println!("{k} = {v}");
    }
    println!("artifacts written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use popper_cli::output::write_atomic;
use popper_cli::{compare, load_scenario, parse_seeds, replay_file, write_run, Axis, CliError};
use popper_core::balloon_filter::DistanceMetric;
use popper_core::mission::Strategy;
use popper_sim::{run, SimConfig};

#[derive(Parser)]
#[command(
    name = "popper",
    version,
    about = "Balloon-popping multirotor simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace, summary, height and path files.
    Run(Overrides),
    /// Run both variants of an axis for every seed.
    Compare {
        #[arg(value_enum)]
        axis: Axis,
        /// Seed list such as `1-10` or `1,4,9`.
        #[arg(long, default_value = "1-10")]
        seeds: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute the summary of a trace and check it against `summary.csv`.
    Replay {
        trace: PathBuf,
        /// Summary to check against; defaults to `summary.csv` next to the trace.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    /// Simulated time limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Star,
    Direct,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Ray,
    Ground,
}

impl Overrides {
    fn scenario(&self) -> Result<SimConfig, CliError> {
        let mut cfg = load_scenario(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(s) = self.strategy {
            cfg.mission.strategy = match s {
                StrategyArg::Star => Strategy::Star,
                StrategyArg::Direct => Strategy::Direct,
            };
        }
        if let Some(m) = self.metric {
            cfg.metric = match m {
                MetricArg::Ray => DistanceMetric::Ray,
                MetricArg::Ground => DistanceMetric::Ground,
            };
        }
        if let Some(t) = self.time_limit {
            cfg.time_limit = t;
        }
        cfg.validate().map_err(|e| CliError::Config {
            key: e.key,
            message: e.message,
        })?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(o) => {
            let cfg = o.scenario()?;
            let trace = run(&cfg).map_err(|e| CliError::Config {
                key: e.key,
                message: e.message,
            })?;
            write_run(&o.out, &trace)?;
            let s = &trace.summary;
            println!(
                "seed {}: {}/{} popped in {:.2} s, {} re-attempts, {} geofence violations -> {}",
                s.seed,
                s.pops(),
                s.balloons,
                s.total_duration,
                s.reattempts,
                s.geofence_violations,
                o.out.display()
            );
            Ok(())
        }
        Command::Compare {
            axis,
            seeds,
            overrides,
        } => {
            let base = overrides.scenario()?;
            let seeds = parse_seeds(&seeds)?;
            let result = compare(&base, axis, &seeds)?;
            let csv = result.to_csv();
            std::fs::create_dir_all(&overrides.out).map_err(|e| CliError::Io {
                path: overrides.out.display().to_string(),
                source: e,
            })?;
            let path = overrides.out.join("comparison.csv");
            write_atomic(&path, &csv)?;
            info!("wrote {}", path.display());
            print!("{csv}");
            Ok(())
        }
        Command::Replay { trace, summary } => {
            let recomputed = replay_file(&trace)?.to_csv();
            print!("{recomputed}");
            let expected_path = summary
                .unwrap_or_else(|| trace.parent().unwrap_or(Path::new(".")).join("summary.csv"));
            if expected_path.exists() {
                let expected =
                    std::fs::read_to_string(&expected_path).map_err(|e| CliError::Io {
                        path: expected_path.display().to_string(),
                        source: e,
                    })?;
                if expected != recomputed {
                    return Err(CliError::Mismatch(expected_path.display().to_string()));
                }
                eprintln!("summary matches {}", expected_path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("POPPER_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vfp_harness::experiment::run_experiment;
use vfp_harness::output::{report, summary_line, write_result};
use vfp_harness::sweep::{run_sweep, Grid};
use vfp_harness::{ExperimentConfig, HarnessError, Status};

#[derive(Parser)]
#[command(name = "vfp", version, about = "Run VFP data-assimilation twin experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run an experiment for every point of a parameter grid.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Tabulate the summaries found under a results directory.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct Overrides {
    /// Added to every configured seed.
    #[arg(long)]
    seed_offset: Option<u64>,
    /// Output directory, replacing `output.dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Method name such as `ETKF`, `SIR` or `LVFPS(GG)`.
    #[arg(long)]
    method: Option<String>,
    /// Ensemble size.
    #[arg(long)]
    nens: Option<usize>,
}

impl Overrides {
    /// Loads the configuration and applies the overrides. The output
    /// directory is returned separately so it does not enter the summary.
    fn load(&self, path: &Path) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(off) = self.seed_offset {
            cfg.seeds = cfg.seeds.offset(off);
        }
        if let Some(m) = &self.method {
            cfg.override_method(m)?;
        }
        if let Some(n) = self.nens {
            cfg.ensemble.n_ens = n;
        }
        cfg.validate()?;
        let dir = self.output.clone().unwrap_or_else(|| cfg.output.dir.clone());
        Ok((cfg, dir))
    }
}

fn execute(cli: Cli) -> Result<Status, HarnessError> {
    match cli.command {
        Command::Run { config, overrides } => {
            let (cfg, dir) = overrides.load(&config)?;
            let result = run_experiment(&cfg)?;
            write_result(&dir, &result)?;
            println!("{}", summary_line(&result.summary));
            for rep in &result.summary.repetitions {
                if let Some(f) = &rep.failure {
                    eprintln!("repetition {}: {f}", rep.repetition);
                }
            }
            Ok(result.summary.status)
        }
        Command::Sweep { config, grid, overrides } => {
            let (cfg, dir) = overrides.load(&config)?;
            let grid = Grid::load(&grid)?;
            let points = run_sweep(&cfg, &grid, &dir)?;
            let mut status = Status::Ok;
            for p in &points {
                match (&p.error, p.mean_rmse) {
                    (Some(e), _) => {
                        eprintln!("{}: {e}", p.dir);
                        status = Status::Partial;
                    }
                    (None, r) => {
                        println!("{} {}: rmse {}", p.dir, p.method, r.map_or("-".into(), |r| format!("{r:.4}")))
                    }
                }
            }
            Ok(status)
        }
        Command::Report { dir } => {
            print!("{}", report(&dir)?);
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

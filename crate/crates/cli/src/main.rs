//! `hotrnn` command-line driver.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors, 2 for
//! failures while running.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use hotrnn::eval::SweepAxis;
use hotrnn::experiment::{self, ExperimentConfig, SweepConfig};
use hotrnn::par::Exec;
use hotrnn::Error;

#[derive(Parser, Debug)]
#[command(name = "hotrnn", version, about = "Higher-order tensor-train RNN forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Run on a single thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (Genz or Lorenz).
    Gen(Common),
    /// Impute, resample and split a raw timestamped CSV.
    Prep(Common),
    /// Train the configured model.
    Train(Common),
    /// RMSE by forecast horizon for the trained checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Comma-separated horizons, e.g. 5,20,80.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
    },
    /// Rank or lag sensitivity sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Sweep axis: rank or lag.
        #[arg(long)]
        axis: Option<SweepAxis>,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
    },
    /// Hyper-parameter grid search.
    Gridsearch {
        #[command(flatten)]
        common: Common,
        /// Train a random subset of this many candidates.
        #[arg(long)]
        budget: Option<usize>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen(c) | Command::Prep(c) | Command::Train(c) => c,
            Command::Eval { common, .. } | Command::Sweep { common, .. } | Command::Gridsearch { common, .. } => common,
        }
    }
}

fn load(common: &Common) -> hotrnn::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::from_file(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let mut cfg = cfg.with_seed(seed);
    if common.sequential {
        cfg.train.exec = Exec::Sequential;
    }
    Ok(cfg)
}

fn run(command: Command) -> hotrnn::Result<()> {
    let common = command.common();
    let mut cfg = load(common)?;
    let out = common.out.clone();
    match &command {
        Command::Gen(_) => {
            let path = experiment::run_gen(&cfg, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Prep(_) => {
            let m = experiment::run_prep(&cfg, &out)?;
            println!(
                "prepared {} train / {} val / {} test sequences ({} rows dropped) in {}",
                m.splits.train.len(),
                m.splits.val.len(),
                m.splits.test.len(),
                m.dropped_rows,
                out.display()
            );
        }
        Command::Train(_) => {
            let o = experiment::run_train(&cfg, &out)?;
            println!(
                "trained {} steps, best val loss {:.6} at step {}{}",
                o.steps_run,
                o.best_val,
                o.best_step,
                if o.stopped_early { " (early stop)" } else { "" }
            );
        }
        Command::Eval { horizons, .. } => {
            let run = experiment::run_eval(&cfg, &out, horizons.as_deref())?;
            for (h, e) in &run.rmse {
                println!("horizon {h}: rmse {e:.6}");
            }
        }
        Command::Sweep { axis, values, .. } => {
            let sweep = match (axis, values, cfg.sweep.take()) {
                (Some(a), Some(v), _) => SweepConfig {
                    axis: *a,
                    values: v.clone(),
                },
                (a, v, Some(base)) => SweepConfig {
                    axis: a.unwrap_or(base.axis),
                    values: v.clone().unwrap_or(base.values),
                },
                _ => return Err(Error::Config("sweep needs --axis and --values or a \"sweep\" section".into())),
            };
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
            let table = experiment::run_sweep(&cfg, &out, &sweep)?;
            for (v, row) in table.values.iter().zip(table.mean_table()) {
                let cols: Vec<String> = table
                    .horizons
                    .iter()
                    .zip(&row)
                    .map(|(h, e)| format!("h{h}={e:.6}"))
                    .collect();
                println!("{}={v}: {}", table.axis, cols.join(" "));
            }
            for f in table.failures() {
                eprintln!("failed: {f}");
            }
        }
        Command::Gridsearch { budget, .. } => {
            if let Some(b) = budget {
                cfg.grid.get_or_insert_with(Default::default).budget = Some(*b);
            }
            let result = experiment::run_gridsearch(&cfg, &out)?;
            let best = result.best_run();
            println!(
                "best of {} runs: #{} {} hidden={} lag={} order={} rank={} lr={} score {:.6}",
                result.runs.len(),
                best.index,
                best.model_config.cell,
                best.model_config.hidden,
                best.model_config.lag,
                best.model_config.order,
                best.model_config.rank,
                best.train_config.learning_rate,
                best.score().unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

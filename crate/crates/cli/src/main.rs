mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use tomobench::experiments::{
    run_experiment, write_results, ExperimentConfig, ExperimentKind, DEFAULT_SEED, FULL_SCALE_TRIALS,
};

#[derive(Parser, Debug)]
#[command(name = "tomobench", version, about = "Monte Carlo comparison of detector-assisted QST and data-pattern tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// MSE vs probe count for several event budgets.
    Fig1(RunArgs),
    /// Bias of the DPT design matrix vs probe count.
    Fig2(RunArgs),
    /// MSE vs inverse condition number of the measurement.
    Fig3(RunArgs),
    /// Run from a JSON config (any earlier meta.json works).
    Run {
        config: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Fast invariant checks; exits non-zero if any fails.
    Selftest {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value = "auto")]
        workers: Workers,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Workers {
    Auto,
    Count(usize),
}

impl FromStr for Workers {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Workers::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected a positive count or `auto`, got `{s}`")),
            Ok(n) => Ok(Workers::Count(n)),
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, env = "TOMOBENCH_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value = "auto")]
    workers: Workers,
    /// Write SVG charts (default).
    #[arg(long, overrides_with = "no_plot")]
    plot: bool,
    #[arg(long, overrides_with = "plot")]
    no_plot: bool,
    /// Use 1000 trials unless --trials is given.
    #[arg(long)]
    full_scale: bool,
    /// Override any config key, e.g. --set M_grid=50,100 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn build_config(kind: ExperimentKind, file: Option<&Path>, args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::from_json_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::defaults_for(kind),
    };
    for assignment in &args.overrides {
        config
            .apply_override(assignment)
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if args.full_scale {
        config.trials = FULL_SCALE_TRIALS;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn with_workers<R: Send>(workers: Workers, f: impl FnOnce() -> R + Send) -> Result<R, Failure> {
    let threads = match workers {
        Workers::Auto => 0,
        Workers::Count(n) => n,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Runtime(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn run(kind: ExperimentKind, file: Option<&Path>, args: &RunArgs) -> Result<(), Failure> {
    let config = build_config(kind, file, args)?;
    log::info!("running {} with master_seed {}", config.kind.as_str(), config.master_seed);
    let output = with_workers(args.workers, || run_experiment(&config))?.map_err(|e| Failure::Runtime(e.to_string()))?;
    for note in &output.diagnostics {
        eprintln!("note: {note}");
    }
    let paths = write_results(&output, &config, &args.out_dir, !args.no_plot)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fig1(args) => run(ExperimentKind::Fig1, None, &args),
        Command::Fig2(args) => run(ExperimentKind::Fig2, None, &args),
        Command::Fig3(args) => run(ExperimentKind::Fig3, None, &args),
        Command::Run { config, args } => {
            if !config.is_file() {
                return Err(Failure::Usage(format!("config file not found: {}", config.display())));
            }
            run(ExperimentKind::Custom, Some(&config), &args)
        }
        Command::Selftest { seed, workers } => {
            if with_workers(workers, || selftest::run_all(seed))? {
                Ok(())
            } else {
                Err(Failure::Runtime("selftest failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("Run `tomobench --help` for usage.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

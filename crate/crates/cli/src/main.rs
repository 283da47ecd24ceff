use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use gauntlet_cli::config::{self, ExperimentKind};
use gauntlet_cli::{pipelines, CliError};

#[derive(Parser)]
#[command(
    name = "gauntlet",
    version,
    about = "Token-count auditing experiments: commitment verifier, predictive auditor, martingale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for record-parallel stages (default: all cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize a synthetic corpus (and optional auxiliary data)
    GenCorpus(RunArgs),
    /// Calibrate the commitment verifier and run inflation attacks
    Coin(RunArgs),
    /// Train the predictive auditor and run one attack mode
    Palace(RunArgs),
    /// Fold the betting martingale over a reporting strategy
    Stat(RunArgs),
    /// Sweep inflation amounts or offsets against the martingale
    Sweep(RunArgs),
}

impl Command {
    fn experiment(&self) -> (ExperimentKind, bool) {
        match self {
            Command::GenCorpus(_) => (ExperimentKind::GenCorpus, false),
            Command::Coin(_) => (ExperimentKind::Coin, false),
            Command::Palace(_) => (ExperimentKind::Palace, false),
            Command::Stat(_) => (ExperimentKind::Stat, false),
            Command::Sweep(_) => (ExperimentKind::Stat, true),
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::GenCorpus(a)
            | Command::Coin(a)
            | Command::Palace(a)
            | Command::Stat(a)
            | Command::Sweep(a) => a,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (kind, wants_sweep) = cli.command.experiment();
    let args = cli.command.args();
    let cfg = config::load(
        &args.config,
        kind,
        wants_sweep,
        args.seed,
        args.out.clone(),
    )?;

    let execute = || pipelines::run(&cfg, wants_sweep);
    let outcome = match args.workers {
        Some(workers) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| CliError::Config(format!("cannot build {workers}-thread pool: {e}")))?;
            pool.install(execute)?
        }
        None => execute()?,
    };

    print!("{}", outcome.report);
    let report_path = cfg.output_dir.join("report.txt");
    std::fs::write(&report_path, outcome.report).map_err(|source| CliError::Pipeline {
        stage: "report".to_string(),
        source: source.into(),
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use confbb_cli::{run_command, CliError, Command, RunConfig, EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL};

/// Influence-function Bayesian bootstrap experiments.
#[derive(Parser)]
#[command(name = "confbb", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Run the benchmark suite and write results.csv / results.json.
    Bench(Args),
    /// Tune α on one task and write the score curve.
    Calibrate(Args),
    /// Compare influence estimates with exact weighted refits.
    OracleCompare(Args),
    /// Validation/test log-score gap as the validation size grows.
    Consistency(Args),
    /// IF-BB against MC dropout on the same splits.
    CompareDropout(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 picks the number of cores.
    #[arg(long, env = "CONFBB_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (cmd, args) = match cli.command {
        Sub::Bench(a) => (Command::Bench, a),
        Sub::Calibrate(a) => (Command::Calibrate, a),
        Sub::OracleCompare(a) => (Command::OracleCompare, a),
        Sub::Consistency(a) => (Command::Consistency, a),
        Sub::CompareDropout(a) => (Command::CompareDropout, a),
    };
    match run(cmd, &args) {
        Ok(partial) => {
            if partial {
                eprintln!("some rows failed; see results.json");
                ExitCode::from(EXIT_PARTIAL)
            } else {
                ExitCode::from(EXIT_OK)
            }
        }
        Err(e) => {
            eprintln!("confbb {}: {e}", cmd.name());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command, args: &Args) -> Result<bool, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {:?} threads: {e}", args.threads)))?;
    let report = pool.install(|| run_command(cmd, &cfg, &args.out))?;
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(report.partial)
}

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use replica_access::harness::{
    self, cmd_bounds, cmd_simulate, cmd_table, BoundsArgs, ExperimentSpec, HarnessError, TableArgs, TableOutcome,
};

/// Multi-channel random access with replicas: policy tables, backlog bounds
/// and simulation sweeps.
#[derive(Debug, Parser)]
#[command(name = "replica-access", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the optimal replica table for M channels and erasure probability gamma.
    Table {
        #[arg(short = 'm', long = "channels")]
        channels: u32,
        #[arg(short, long)]
        gamma: f64,
        /// Largest device count in the table [default: 4M].
        #[arg(long)]
        n_max: Option<u32>,
        /// Output file [default: the cache directory's file for (M, gamma)].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing file holding a different table.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Many-channel backlog limits per (gamma, lambda).
    Bounds {
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.4])]
        gamma: Vec<f64>,
        /// Loads per channel [default: 0.01 to 0.36 in steps of 0.01].
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        #[arg(long, default_value_t = harness::DEFAULT_BOUND_K_MAX)]
        k_max: u32,
        /// CSV output [default: stdout].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sweep described by a JSON experiment file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// CSV output [default: the file's output_path].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Table { channels, gamma, n_max, out, force, workers } => {
            let out = out.unwrap_or_else(|| {
                harness::cache_dir(harness::DEFAULT_CACHE_DIR.as_ref()).join(harness::table_file_name(channels, gamma))
            });
            let args = TableArgs { n_channels: channels, erasure_prob: gamma, n_max, out, force };
            let outcome = with_workers(workers, || cmd_table(&args))?;
            match outcome {
                TableOutcome::Written => println!("wrote {}", args.out.display()),
                TableOutcome::Unchanged => println!("{} is up to date", args.out.display()),
            }
        }
        Command::Bounds { gamma, lambda, k_max, out } => {
            let lambdas = if lambda.is_empty() { harness::default_lambda_grid() } else { lambda };
            let rows = cmd_bounds(&BoundsArgs { gammas: gamma, lambdas, k_max })?;
            match out {
                Some(path) => {
                    let mut buf = Vec::new();
                    harness::write_bounds_csv(&mut buf, &rows)?;
                    std::fs::write(&path, buf).map_err(|source| HarnessError::Io { path, source })?;
                }
                None => harness::write_bounds_csv(io::stdout().lock(), &rows)?,
            }
        }
        Command::Simulate { config, out, workers } => {
            let spec = ExperimentSpec::from_file(&config)?;
            let report = cmd_simulate(&spec, out.as_deref(), workers)?;
            println!(
                "{} rows written to {} (log {})",
                report.rows.len(),
                report.csv_path.display(),
                report.log_path.display()
            );
        }
    }
    Ok(())
}

fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T, HarnessError> + Send,
) -> Result<T, HarnessError> {
    match workers {
        Some(0) => Err(HarnessError::Config("workers must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(f),
        _ => f(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

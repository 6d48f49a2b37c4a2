use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ipm_ssl::config::ExperimentConfig;
use ipm_ssl::data;
use ipm_ssl::eval::{self, SweepSpec, EXIT_FAILURE, EXIT_INVALID};

#[derive(Parser)]
#[command(name = "ipm-ssl", version, about = "Semi-supervised GAN training with IPM critics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value` with a dotted key and a JSON value, e.g. `hyper.epochs=3`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run every cell of a sweep and write a summary table.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train only the classifier (backbone and class head) on the labeled subset.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the configured dataset as `split,label,x0,...` CSV.
    DumpData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(u8::try_from(c).unwrap_or(1))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            overrides,
        } => code(eval::run_experiment(&config, &out, seed, &overrides, false)),
        Command::Baseline { config, out } => code(eval::run_experiment(&config, &out, None, &[], true)),
        Command::Sweep { spec, out, jobs } => {
            let spec = match SweepSpec::load(&spec) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return code(EXIT_INVALID);
                }
            };
            match eval::run_sweep(&spec, &out, jobs) {
                Ok(rows) => {
                    print!("{}", eval::sweep_csv(&spec, &rows));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(EXIT_FAILURE)
                }
            }
        }
        Command::DumpData { config, out } => {
            let result = ExperimentConfig::load(&config, &[])
                .and_then(|c| data::load_dataset(&c.dataset))
                .and_then(|ds| {
                    let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
                    data::write_dataset_csv(&ds, &mut f)
                });
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    code(EXIT_FAILURE)
                }
            }
        }
    }
}

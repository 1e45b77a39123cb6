use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slowfast::{bench_to_disk, load_config, simulate_to_disk, validate_report, AppError};

#[derive(Parser)]
#[command(
    name = "slowfast",
    version,
    about = "Stiff solvers for slow-fast neuronal networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one network and write its trajectory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a timed sweep comparing standard and economical solves.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the property checks.
    Validate {
        /// Smaller sizes and fewer trials.
        #[arg(long)]
        quick: bool,
    },
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Simulate { config } => {
            let cfg = load_config(&config)?;
            let (path, sim) = simulate_to_disk(&cfg)?;
            let st = sim.stats;
            println!(
                "steps={} rejections={} newton_iters={} newton_failures={}",
                st.steps, st.rejections, st.newton_iterations, st.newton_failures
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Bench { config } => {
            let cfg = load_config(&config)?;
            let result = bench_to_disk(&cfg, |line| eprintln!("{line}"))?;
            println!(
                "{} records, {} ratios written to {}",
                result.rows.len(),
                result.ratios.len(),
                cfg.output.dir.display()
            );
            if result.failures.is_empty() {
                Ok(())
            } else {
                Err(AppError::Runtime(format!(
                    "{} benchmark run(s) failed",
                    result.failures.len()
                )))
            }
        }
        Command::Validate { quick } => validate_report(quick, std::io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

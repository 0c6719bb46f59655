use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semidens_cli::commands::{cmd_evaluate, cmd_fit, cmd_simulate, density_path, Overrides};
use semidens_cli::{CliError, CliResult, EXIT_INPUT, EXIT_OK};

#[derive(Parser)]
#[command(name = "semidens", version, about = "Semiparametric density estimation with smoothing splines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write the fit artifact and its density grid.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// CSV data with a header row; presets fall back to bundled data.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Knot seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Cross-validation inflation factor.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run a simulation scenario and write its table.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use 100 replicates per cell.
        #[arg(long)]
        full: bool,
        /// Base seed of the replicates.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Compare a fit artifact with a reference density.
    Evaluate {
        #[arg(long)]
        fit: PathBuf,
        /// JSON truth specification.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit { config, data, out, seed, alpha } => {
            let artifact = cmd_fit(&config, data.as_deref(), &out, Overrides { seed, alpha })?;
            let fit = &artifact.fit;
            eprintln!(
                "theta = {:?}, lambda = {:.4e}, converged = {}; wrote {} and {}",
                fit.theta_hat,
                fit.lambda_hat,
                fit.converged,
                out.display(),
                density_path(&out).display()
            );
        }
        Command::Simulate { config, out, full, seed, alpha } => {
            let rows = cmd_simulate(&config, &out, full, Overrides { seed, alpha })?;
            eprintln!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Evaluate { fit, truth, out } => {
            let rows = cmd_evaluate(&fit, &truth, &out)?;
            for r in rows {
                eprintln!("sample {} {} = {:.6e}", r.sample, r.metric, r.value);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report(e: &CliError) {
    let kind = match e {
        CliError::Input(_) => "input error",
        CliError::Estimation(_) => "estimation failure",
    };
    eprintln!("semidens: {kind}: {e}");
}

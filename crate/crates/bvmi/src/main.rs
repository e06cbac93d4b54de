use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use bvmi::{impute_once, run_experiment, ExperimentConfig, ImputeConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bvmi", version, about = "Bias-variance multiple imputation of return panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a bias-variance study and write one CSV row per bias budget
    Run {
        #[arg(long)]
        config: PathBuf,
        /// CSV destination, overriding the config
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed, overriding the config
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = one per core)
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Impute the NA cells of a panel file at bias budget delta
    Impute {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        delta: f64,
        /// Number of imputed panels to write
        #[arg(long)]
        m: usize,
    },
}

fn run(cli: Cli) -> bvmi::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => {
            let mut config = ExperimentConfig::from_path(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let report = run_experiment(&config, threads)?;
            match out.or(config.output) {
                Some(path) => {
                    report.save(&path)?;
                    let best = &report.rows[report.ecmse_argmin()];
                    eprintln!(
                        "wrote {} rows to {}; ECMSE minimum at delta/delta_max = {:.4}{}",
                        report.rows.len(),
                        path.display(),
                        best.delta_over_delta_max,
                        if report.interior_minimizer() { " (interior)" } else { "" }
                    );
                }
                None => report.write_csv(io::stdout().lock()).map_err(|source| bvmi::Error::Output {
                    path: PathBuf::from("<stdout>"),
                    source,
                })?,
            }
        }
        Command::Impute { config, delta, m } => {
            let config = ImputeConfig::from_path(&config)?;
            let outcome = impute_once(&config, delta, m)?;
            eprintln!(
                "wrote {} panels to {} (delta_max = {}, lambda2 = {})",
                outcome.files.len(),
                config.output_dir.display(),
                outcome.delta_max,
                outcome.weights.lambda2
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BVMI_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

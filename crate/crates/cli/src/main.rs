use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use strb_cli::config::ExperimentConfig;
use strb_cli::experiment::{
    run, run_with_bases, sweep_projection_error, train_for_artifact, RunReport,
};
use strb_cli::CliError;
use strb_core::{load_artifact, save_artifact};

#[derive(Parser)]
#[command(
    name = "strb",
    version,
    about = "Certified reduced-basis experiments for the nonsmooth heat equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per the configured mode and evaluate the test set.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Average projection estimate on the test set for several step counts.
    SweepPdelta {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        k_list: Vec<usize>,
        /// Train once at the largest step count and reuse the bases.
        #[arg(long)]
        reuse_basis: bool,
    },
    /// Train per the configuration and store the bases as text.
    SaveArtifact {
        #[arg(long)]
        config: PathBuf,
        path: PathBuf,
    },
    /// Evaluate the configured test set with stored bases.
    LoadArtifact {
        #[arg(long)]
        config: PathBuf,
        path: PathBuf,
    },
}

fn print_report(report: &RunReport) {
    println!("{}", RunReport::CSV_HEADER);
    println!("{}", report.csv_row());
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            configure_threads(&cfg)?;
            print_report(&run(&cfg)?);
        }
        Command::SweepPdelta {
            config,
            k_list,
            reuse_basis,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            configure_threads(&cfg)?;
            let rows = sweep_projection_error(&cfg, &k_list, reuse_basis)?;
            println!("K,avg_delta_p");
            for (k, v) in rows {
                println!("{k},{v}");
            }
        }
        Command::SaveArtifact { config, path } => {
            let cfg = ExperimentConfig::load(&config)?;
            configure_threads(&cfg)?;
            let (basis, deim) = train_for_artifact(&cfg)?;
            save_artifact(&path, &basis, &deim)?;
            println!(
                "saved N={} ell={} L={} to {}",
                basis.n_dofs(),
                basis.dim(),
                deim.len(),
                path.display()
            );
        }
        Command::LoadArtifact { config, path } => {
            let cfg = ExperimentConfig::load(&config)?;
            configure_threads(&cfg)?;
            let model = strb_cli::experiment::build_model(&cfg)?;
            let (basis, deim) = load_artifact(&path)?.into_bases(&model.ops)?;
            let deim = (!deim.is_empty()).then_some(deim);
            print_report(&run_with_bases(&cfg, basis, deim)?);
        }
    }
    Ok(())
}

fn configure_threads(cfg: &ExperimentConfig) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use stgamma::config::RunConfig;
use stgamma::pipeline;

#[derive(Parser)]
#[command(name = "stgamma", version, about = "Spatiotemporal count models with autoregressive gamma frailties")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset (writes data.csv, locations.csv, truth.json)
    Simulate(Common),
    /// Run the Gibbs sampler and write draws plus a fit summary
    Fit(Common),
    /// Posterior predictive draws for future periods and new locations
    Predict(Common),
    /// Recompute metrics and plot data from stored artifacts
    Diagnose(Common),
    /// Every stage that has a section in the configuration, in order
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Seed for every stage, overriding the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output root, overriding the configuration
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> stgamma::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> stgamma::Result<()> {
    let common = match &cli.command {
        Command::Simulate(c) | Command::Fit(c) | Command::Predict(c) | Command::Diagnose(c) | Command::Run(c) => c,
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| stgamma::Error::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let cfg = common.load()?;
    match cli.command {
        Command::Simulate(_) => {
            let dir = pipeline::cli_simulate(&cfg)?;
            println!("simulated data written to {}", dir.display());
        }
        Command::Fit(_) => {
            let summary = pipeline::cli_fit(&cfg)?;
            print!("{}", summary.table());
        }
        Command::Predict(_) => {
            let pred = pipeline::cli_predict(&cfg)?;
            println!("{} draws of {} predicted cells", pred.draws.len(), pred.n_cells());
        }
        Command::Diagnose(_) => {
            let report = pipeline::cli_diagnose(&cfg)?;
            print!("{}", report.summary.table());
            if let Some(h) = report.holdout {
                println!("\nheld-out cells {}  MAE {:.6}  MedAE {:.6}", h.n_cells, h.mae, h.medae);
            }
        }
        Command::Run(_) => pipeline::run_all(&cfg)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use seirgrad_cli::commands;
use seirgrad_cli::RunConfig;

#[derive(Parser)]
#[command(name = "seirgrad", version, about = "SEIR parameter estimation through a learned surrogate")]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for simulation and grid search.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate episodes with observations and the train/dev/test split.
    Generate,
    /// Simulate K prior draws on every training episode.
    Simulate,
    /// Train the graph encoder on training snapshots.
    TrainEncoder,
    /// Train the surrogate on the simulation dataset.
    TrainSurrogate,
    /// Fit θ through the surrogate on the training episodes.
    Fit,
    /// Score the fitted θ on the test episodes; writes metrics, series and plots.
    Evaluate,
    /// Budget-matched grid search vs surrogate comparison over a K grid.
    Compare {
        /// Comma-separated K values; the config's grid when omitted.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// One ablation sweep: lambda, incorporation or graph.
    Ablate { which: String },
    /// simulate, train-encoder, train-surrogate, fit and evaluate in one run.
    Pipeline,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = cli.out {
        config.output = o;
    }
    if cli.workers.is_some() {
        config.workers = cli.workers;
    }
    config.validate()?;
    if let Some(n) = config.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }

    match cli.command {
        Command::Generate => {
            let files = commands::cmd_generate(&config)?;
            println!("wrote {} files under {}", files.len(), config.output.display());
        }
        Command::Simulate => {
            let path = commands::cmd_simulate(&config)?;
            println!("wrote {}", path.display());
        }
        Command::TrainEncoder => match commands::cmd_train_encoder(&config)? {
            Some(path) => println!("wrote {}", path.display()),
            None => println!("graph mode none: no encoder needed"),
        },
        Command::TrainSurrogate => {
            let curve = commands::cmd_train_surrogate(&config)?;
            println!("best validation loss {:.4e} at epoch {} ({} steps)", curve.best_val_loss(), curve.best_epoch, curve.steps);
        }
        Command::Fit => {
            let fit = commands::cmd_fit(&config)?;
            println!("loss {:.4e} after {} iterations", fit.loss, fit.iterations);
            for (name, v) in fit.theta_names.iter().zip(&fit.theta_star) {
                println!("  {name:<16} {v:.5}");
            }
        }
        Command::Evaluate => {
            let eval = commands::cmd_evaluate(&config)?;
            println!("mean test error {:.4} over {} episodes", eval.mean_error, eval.episodes.len());
        }
        Command::Compare { k } => {
            println!("{:>6} {:>14} {:>14} {:>12}", "K", "vanilla", "surrogate", "simulations");
            for r in commands::cmd_compare(&config, k.as_deref())? {
                println!("{:>6} {:>14.4} {:>14.4} {:>12}", r.k, r.vanilla_error, r.surrogate_error, r.vanilla_simulations);
            }
        }
        Command::Ablate { which } => {
            for r in commands::cmd_ablate(&config, &which)? {
                println!("{:<12} test {:.4}", r.variant, r.test_error);
            }
        }
        Command::Pipeline => {
            let (fit, eval) = commands::cmd_pipeline(&config)?;
            println!("fit loss {:.4e}; mean test error {:.4}", fit.loss, eval.mean_error);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

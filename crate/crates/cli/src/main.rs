use std::path::PathBuf;
use std::process::ExitCode;

use chained_gp::harness::{commands, ExperimentConfig};
use chained_gp::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chained-gp", version, about = "Chained Gaussian process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit on the full dataset; write checkpoint, trace, metrics and plot data
    Fit(Common),
    /// Apply a saved checkpoint to the configured dataset
    Predict(Common),
    /// k-fold cross-validation with restarts
    Cv(Common),
    /// Write the configured (synthetic) dataset and its ground truth
    Datagen(Common),
    /// Quadrature versus Monte Carlo error table
    Quadcheck(Common),
    /// Finite-difference check of every gradient block
    Gradcheck(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted `key=value` override, applied after the file; repeatable
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        let mut cfg = ExperimentConfig::load(&self.config, &overrides)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        std::fs::create_dir_all(&cfg.output_dir)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
        Ok(cfg)
    }
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Fit(c) => report(&commands::run_fit(&c.load()?)?),
        Command::Predict(c) => report(&commands::run_predict(&c.load()?)?),
        Command::Cv(c) => {
            let (summary, files) = commands::run_cv_command(&c.load()?)?;
            log::info!(
                "{} on {}: nlpd {:.4} ± {:.4}, mae {:.4} ± {:.4}",
                summary.model,
                summary.dataset,
                summary.nlpd_mean,
                summary.nlpd_sd,
                summary.mae_mean,
                summary.mae_sd
            );
            report(&files);
        }
        Command::Datagen(c) => report(&commands::run_datagen(&c.load()?)?),
        Command::Quadcheck(c) => report(&commands::run_quadcheck(&c.load()?)?),
        Command::Gradcheck(c) => {
            let (files, passed) = commands::run_gradcheck(&c.load()?)?;
            report(&files);
            if !passed {
                eprintln!("error: gradient check failed");
                return Ok(ExitCode::from(4));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

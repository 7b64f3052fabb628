use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qarma::config::RunConfig;
use qarma::evaluate::ScoreFactor;
use qarma::models::write_models_csv;
use qarma::pipeline::{
    configure_threads, run_evaluate, run_pipeline, run_synth, write_atomic, DumpOptions,
};
use qarma::synth::{ErrorDist, SyntheticSpec};
use qarma::{models::enumerate_models, Error, Result};

/// Factor-augmented quantile autoregression with model averaging.
#[derive(Debug, Parser)]
#[command(name = "qarma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Backtest every configured method and score the forecasts.
    Forecast {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's run.output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write estimation-window factors and loadings into this directory.
        #[arg(long)]
        dump_factors: Option<PathBuf>,
        #[arg(long)]
        dump_models: Option<PathBuf>,
        #[arg(long)]
        dump_weights: Option<PathBuf>,
    },
    /// Score an existing forecasts file.
    Evaluate {
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "coverage")]
        score_factor: String,
    },
    /// Generate a synthetic panel with its known quantiles.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 109)]
        t: usize,
        #[arg(long, default_value_t = 40)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 0.5)]
        ar: f64,
        #[arg(long, default_value = "gaussian")]
        errors: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the candidate model enumeration as CSV.
    DumpModels {
        #[arg(long, default_value_t = 6)]
        pool_size: usize,
        #[arg(long, default_value_t = 2)]
        min_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Forecast {
            config,
            out,
            seed,
            dump_factors,
            dump_models,
            dump_weights,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let dumps = DumpOptions {
                factors_dir: dump_factors,
                models_path: dump_models,
                weights_path: dump_weights,
            };
            let outcome = run_pipeline(&cfg, &dumps)?;
            print!("{}", outcome.summary);
            log::info!(
                "wrote {} files to {}",
                outcome.files.len(),
                cfg.output_dir.display()
            );
        }
        Command::Evaluate {
            forecasts,
            out,
            score_factor,
        } => {
            let factor: ScoreFactor = score_factor.parse()?;
            let reports = run_evaluate(&forecasts, &out, factor)?;
            println!("{} report rows written to {}", reports.len(), out.display());
        }
        Command::Synth {
            out,
            t,
            n,
            k,
            ar,
            errors,
            seed,
        } => {
            let spec = SyntheticSpec {
                t,
                n,
                k,
                a1: ar,
                errors: errors.parse::<ErrorDist>()?,
                seed,
                ..SyntheticSpec::default()
            };
            let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
            run_synth(&spec, &grid, &out)?;
            println!(
                "synthetic panel ({t} x {}) written to {}",
                n + 2,
                out.display()
            );
        }
        Command::DumpModels {
            pool_size,
            min_size,
            out,
        } => {
            let models = enumerate_models(pool_size, min_size)?;
            let mut buf = Vec::new();
            write_models_csv(&models, pool_size, &mut buf).map_err(|e| Error::io("<memory>", e))?;
            match out {
                Some(p) => write_atomic(&p, &buf)?,
                None => std::io::stdout()
                    .write_all(&buf)
                    .map_err(|e| Error::io("<stdout>", e))?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgfed::harness::{cmd_accountant, cmd_digitize, cmd_eval, cmd_render, cmd_train, ExperimentConfig};
use ecgfed::Error;
use serde_json::{json, Value};

/// Synthetic ECG pages, federated segmenter training, digitization and
/// run statistics.
#[derive(Parser)]
#[command(name = "ecgfed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML (or JSON) experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the dataset seed (render), the training seed (train) or
    /// the bootstrap seed (eval).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic multi-site dataset.
    Render,
    /// Train (or resume) one run.
    Train {
        /// Dataset directory written by `render`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Convert a page image to a 12-lead CSV with a trained checkpoint.
    Digitize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// Also write the smoothed display copy here.
        #[arg(long)]
        viz: Option<PathBuf>,
    },
    /// Compare finished runs (or directories of seed replicates).
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
    },
    /// Privacy loss of repeated Gaussian rounds.
    Accountant {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        rounds: usize,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
    },
}

fn need_out(out: &Option<PathBuf>) -> Result<&Path, Error> {
    out.as_deref()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn init_workers(cfg: &ExperimentConfig) {
    let n = cfg.io.workers.unwrap_or(cfg.dataset.profiles.len()).max(1);
    // Fails only if a pool already exists, which is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn run(cli: Cli) -> Result<Value, Error> {
    let c = &cli.common;
    let mut cfg = ExperimentConfig::load(c.config.as_deref())?;
    match cli.command {
        Command::Render => {
            if let Some(s) = c.seed {
                cfg.dataset.seed = s;
            }
            init_workers(&cfg);
            cmd_render(&cfg, need_out(&c.out)?, c.force)
        }
        Command::Train { data } => {
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            init_workers(&cfg);
            cmd_train(&cfg, data.as_deref(), need_out(&c.out)?, c.force)
        }
        Command::Digitize {
            model,
            input,
            calib,
            viz,
        } => {
            init_workers(&cfg);
            cmd_digitize(&cfg, &model, &input, &calib, need_out(&c.out)?, viz.as_deref())
        }
        Command::Eval { runs } => {
            if let Some(s) = c.seed {
                cfg.eval.bootstrap_seed = s;
            }
            init_workers(&cfg);
            cmd_eval(&cfg, &runs, need_out(&c.out)?)
        }
        Command::Accountant { sigma, rounds, delta } => {
            let v = cmd_accountant(sigma, rounds, delta)?;
            if let Some(out) = &c.out {
                let text = serde_json::to_string_pretty(&v)?;
                std::fs::write(out, text).map_err(|e| Error::Io {
                    path: out.clone(),
                    source: e,
                })?;
            }
            Ok(v)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim()}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}

mod commands;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qubo_svm::experiment::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "qsvm", version, about = "Train and evaluate SVMs encoded as QUBO problems")]
pub struct Cli {
    /// TOML config file; omitted keys take their defaults.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// brute_force, simulated_anneal, analog_ideal or analog_noisy.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    #[arg(long, global = true)]
    pub shots: Option<u64>,
    /// Replaces the configured list of training sizes.
    #[arg(long, global = true)]
    pub train_size: Option<usize>,
    /// Run directory.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the QUBO matrix for one split.
    Formulate {
        #[arg(long, default_value_t = 0)]
        repeat: usize,
    },
    /// Place atoms whose interactions approximate a QUBO matrix.
    Embed {
        #[arg(long)]
        qubo: PathBuf,
    },
    /// Solve the split's QUBO with the selected backend and decode models.
    Train {
        #[arg(long, default_value_t = 0)]
        repeat: usize,
    },
    /// Score a saved model, or a freshly fitted baseline, on one split.
    Evaluate {
        /// Model JSON written by `train` or a saved baseline.
        #[arg(long, conflicts_with = "baseline")]
        model: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, default_value_t = 0)]
        repeat: usize,
    },
    /// Run the model roster over every training size and repeat.
    Experiment,
    /// Exhaustive spectrum of a QUBO file.
    Oracle {
        #[arg(long)]
        qubo: PathBuf,
        #[arg(long, default_value_t = 16)]
        top_k: usize,
        /// Every state, overriding --top-k.
        #[arg(long)]
        full: bool,
    },
    /// Print the resolved config as TOML.
    Config,
}

/// Bad input or configuration (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Invalid>() || cause.is::<toml::de::Error>() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<qubo_svm::Error>() {
            return if err.is_validation() { 1 } else { 2 };
        }
    }
    2
}

pub fn resolve_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("reading config {}: {e}", path.display())))?;
            commands::parse_config(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = &cli.backend {
        cfg.backend = b.clone();
    }
    if let Some(s) = cli.shots {
        cfg.shots = s;
    }
    if let Some(n) = cli.train_size {
        cfg.protocol.train_sizes = vec![n];
    }
    if let Some(o) = &cli.output {
        cfg.output = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `cfur`: reproducible runs of censored and fair representation experiments.
//!
//! Every subcommand reads an optional TOML config (`--config`), applies flag
//! overrides, and writes CSV or JSON files under `--out-dir`. Outputs are a
//! pure function of the inputs, the config and the seed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Config, SweepKind};

#[derive(Debug, Parser)]
#[command(name = "cfur", version, about = "Censored and fair universal representations")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for sweeps and neighbour search.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample Gaussian-mixture train and test sets.
    GenData {
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        train_size: Option<usize>,
        #[arg(long)]
        test_size: Option<usize>,
    },
    /// Optimal accuracy-distortion frontier of the Gaussian mixture.
    SolveTheory {
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
    },
    /// Train an encoder (or a fair predictor) at one budget.
    Train(TrainArgs),
    /// Score a trained encoder or predictor on a dataset.
    Evaluate(EvaluateArgs),
    /// Train and evaluate at every budget of a list.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
    },
    /// Local differential-privacy risk of context-free noise.
    DpRisk {
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// k-NN mutual information between features (or an embedding) and S.
    MiEstimate(MiArgs),
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum KindArg {
    Gmm,
    Fair,
    Dataset,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Saved training set (overrides `data.train`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Saved test set (overrides `data.test`).
    #[arg(long)]
    test_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Constraint method name.
    #[arg(long)]
    constraint: Option<String>,
    /// representation, task-aware, fair-classifier-eo or fair-classifier-dp.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    task_weight: Option<f64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Encoder file written by `train`.
    #[arg(long, conflicts_with = "predictor")]
    encoder: Option<PathBuf>,
    /// Adversary network scored on the encoded test set.
    #[arg(long)]
    adversary: Option<PathBuf>,
    /// Fair predictor written by a fair-classifier run.
    #[arg(long)]
    predictor: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MiArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Encode the features with this encoder first.
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Use this classifier's penultimate-layer embedding.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Principal components kept before estimating.
    #[arg(long)]
    pca: Option<usize>,
}

fn resolve(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.global.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let g = &cli.global;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.out_dir {
        cfg.out_dir = d.clone();
    }
    if g.threads.is_some() {
        cfg.threads = g.threads;
    }
    let data_args = match &cli.command {
        Command::Train(a) => Some(&a.data),
        Command::Evaluate(a) => Some(&a.data),
        Command::MiEstimate(a) => Some(&a.data),
        _ => None,
    };
    if let Some(d) = data_args {
        if d.data.is_some() {
            cfg.data.train = d.data.clone();
        }
        if d.test_data.is_some() {
            cfg.data.test = d.test_data.clone();
        }
    }
    match &cli.command {
        Command::GenData { q, train_size, test_size } => {
            cfg.gmm.q = q.unwrap_or(cfg.gmm.q);
            cfg.gmm.train_size = train_size.unwrap_or(cfg.gmm.train_size);
            cfg.gmm.test_size = test_size.unwrap_or(cfg.gmm.test_size);
        }
        Command::SolveTheory { budgets: Some(b) } => cfg.theory.budgets = b.clone(),
        Command::Train(a) => {
            cfg.train.budget = a.budget.unwrap_or(cfg.train.budget);
            cfg.train.iterations = a.iterations.unwrap_or(cfg.train.iterations);
            cfg.train.task_weight = a.task_weight.unwrap_or(cfg.train.task_weight);
            if let Some(c) = &a.constraint {
                cfg.train.constraint = c.clone();
            }
            if let Some(m) = &a.mode {
                cfg.train.mode = serde_json::from_value(serde_json::Value::String(m.clone()))
                    .map_err(|_| anyhow::anyhow!("--mode: unknown training mode `{m}`"))?;
            }
        }
        Command::Sweep { budgets, kind } => {
            if let Some(b) = budgets {
                cfg.sweep.budgets = b.clone();
            }
            if let Some(k) = kind {
                cfg.sweep.kind = match k {
                    KindArg::Gmm => SweepKind::Gmm,
                    KindArg::Fair => SweepKind::Fair,
                    KindArg::Dataset => SweepKind::Dataset,
                };
            }
        }
        Command::DpRisk { dim, budgets, delta } => {
            cfg.dp.dim = dim.unwrap_or(cfg.dp.dim);
            cfg.dp.delta = delta.unwrap_or(cfg.dp.delta);
            if let Some(b) = budgets {
                cfg.dp.budgets = b.clone();
            }
        }
        Command::MiEstimate(a) => {
            cfg.mi.k = a.k.unwrap_or(cfg.mi.k);
            if a.pca.is_some() {
                cfg.mi.pca = a.pca;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("--threads: {e}"))?;
    }
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| anyhow::anyhow!("cannot create output directory {}: {e}", cfg.out_dir.display()))?;
    match &cli.command {
        Command::GenData { .. } => commands::gen_data(&cfg),
        Command::SolveTheory { .. } => commands::solve_theory(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Evaluate(a) => commands::evaluate(&cfg, a.encoder.as_deref(), a.adversary.as_deref(), a.predictor.as_deref()),
        Command::Sweep { .. } => commands::sweep(&cfg),
        Command::DpRisk { .. } => commands::dp_risk(&cfg),
        Command::MiEstimate(a) => commands::mi_estimate(&cfg, a.encoder.as_deref(), a.model.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

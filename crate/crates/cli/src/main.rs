//! `bandit-router` command-line driver.
//!
//! Every subcommand writes its artifacts under `--out` together with
//! `run_manifest.json` (effective config, its sha256, seed, version).
//! Failures print `{"error": {...}}` on stderr; bad input exits 2.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "bandit-router",
    version,
    about = "Budget-aware contextual-bandit LLM routing"
)]
struct Cli {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
struct Inputs {
    /// Routing dataset (JSONL or CSV).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Arm manifest; defaults to the dataset's sidecar.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Pairwise preference JSONL.
    #[arg(long)]
    prefs: Option<PathBuf>,
    /// Pretrained model from `pretrain`.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset, manifest and preference file.
    Synth,
    /// Fit the query projection and arm embeddings.
    Pretrain(Inputs),
    /// Grid-search the policy parameter on the tuning bucket.
    Tune(Inputs),
    /// Online learning pass over the learning bucket.
    ReplayLearn(Inputs),
    /// Greedy deployment, optionally under a budget.
    ReplayDeploy {
        #[command(flatten)]
        inputs: Inputs,
        /// Router state written by `replay-learn`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Deployment performance of several policies over a budget grid.
    SweepBudget {
        #[command(flatten)]
        inputs: Inputs,
        /// Comma-separated budgets.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
    },
    /// Learn across two streams and compare windows around the boundary.
    Shift {
        #[arg(long)]
        stream_a: Option<PathBuf>,
        #[arg(long)]
        stream_b: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        prefs: Option<PathBuf>,
    },
    /// Aggregate replay reports into a seed-averaged CSV series.
    Report {
        /// `ReplayReport` JSON files.
        #[arg(long = "input", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
    /// OFUL vs prior-informed OFUL regret on synthetic linear bandits.
    ValidateRegret {
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        horizon: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Kind {
    Regret,
    Reward,
    Width,
}

impl Inputs {
    fn apply(&self, cfg: &mut RunConfig) {
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut cfg.data, &self.data);
        set(&mut cfg.manifest, &self.manifest);
        set(&mut cfg.preferences, &self.prefs);
        set(&mut cfg.model, &self.model);
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out.clone_from(o);
    }
    cfg.pipeline.seed = cfg.seed;
    match &cli.command {
        Command::Synth | Command::ValidateRegret { .. } => {}
        Command::Pretrain(i) | Command::Tune(i) | Command::ReplayLearn(i) => i.apply(&mut cfg),
        Command::ReplayDeploy {
            inputs,
            checkpoint,
            budget,
        } => {
            inputs.apply(&mut cfg);
            if checkpoint.is_some() {
                cfg.checkpoint.clone_from(checkpoint);
            }
            if budget.is_some() {
                cfg.budget = *budget;
            }
        }
        Command::SweepBudget { inputs, budgets } => {
            inputs.apply(&mut cfg);
            if let Some(b) = budgets {
                cfg.budgets.clone_from(b);
            }
        }
        Command::Shift {
            stream_a,
            stream_b,
            manifest,
            prefs,
        } => {
            if stream_a.is_some() {
                cfg.shift.stream_a.clone_from(stream_a);
            }
            if stream_b.is_some() {
                cfg.shift.stream_b.clone_from(stream_b);
            }
            if manifest.is_some() {
                cfg.manifest.clone_from(manifest);
            }
            if prefs.is_some() {
                cfg.preferences.clone_from(prefs);
            }
        }
        Command::Report { inputs, kind } => {
            if !inputs.is_empty() {
                cfg.reports.clone_from(inputs);
            }
            if let Some(k) = kind {
                cfg.series = match k {
                    Kind::Regret => bandit_router::report::SeriesKind::Regret,
                    Kind::Reward => bandit_router::report::SeriesKind::Reward,
                    Kind::Width => bandit_router::report::SeriesKind::Width,
                };
            }
        }
    }
    if let Command::ValidateRegret { seeds, horizon } = &cli.command {
        if let Some(s) = seeds {
            cfg.regret.seeds = *s;
        }
        if let Some(h) = horizon {
            cfg.regret.horizon = *h;
        }
        cfg.regret.base_seed = cfg.seed;
    }
    cfg.scenario.seed = cfg.seed;
    cfg.check_paths()?;
    cfg.check_ranges()?;
    Ok(cfg)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("BANDIT_ROUTER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        Failure::config(format!(
            "BANDIT_ROUTER_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("thread pool: {e}")))
}

fn run() -> Result<(), Failure> {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            return Err(Failure::usage(
                text.lines()
                    .next()
                    .unwrap_or("invalid arguments")
                    .trim_start_matches("error: "),
            ));
        }
    };
    configure_threads()?;
    let cfg = effective_config(&cli)?;
    let name = commands::dispatch(&cli.command, &cfg)?;
    commands::write_run_manifest(name, &cfg)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code as u8)
        }
    }
}

mod commands;
mod config;
mod exit;
mod run;
mod selfcheck;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::error;
use serde_json::{json, Value};

use config::ExperimentConfig;
use exit::{CliError, ExitCode, WithCode};

#[derive(Parser, Debug)]
#[command(name = "wscloc", version, about = "Sparse-view pose refinement and relocalization experiments")]
struct Cli {
    /// Experiment config (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Component to disable; repeatable.
    #[arg(long, global = true, value_parser = ["sc", "te", "rvs", "if_loss"])]
    ablate: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset from the config's scene.
    GenScene,
    /// Refine the noisy poses of a dataset's training views.
    Stage1 {
        /// Dataset directory written by gen-scene.
        dataset: PathBuf,
    },
    /// Train the pose regressor on stage-1 labels.
    Stage2 {
        /// Run directory written by stage1.
        stage1_run: PathBuf,
        /// Synthetic views per training view (overrides the config).
        #[arg(long)]
        rvs: Option<usize>,
    },
    /// Median errors between two trajectories.
    Eval {
        estimate: PathBuf,
        ground_truth: PathBuf,
        /// Fit a similarity to the translations first.
        #[arg(long)]
        align: bool,
    },
    /// Run the oracle checks.
    Selfcheck,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .code(ExitCode::BadInput)?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::msg(
            ExitCode::BadInput,
            format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()),
        )
    })
}

fn effective_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.scene.seed = cfg.seed;
    for name in &cli.ablate {
        cfg.ablations.set(name)?;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<Value, CliError> {
    match &cli.command {
        Command::GenScene => commands::gen_scene(&effective_config(cli)?, &cli.out),
        Command::Stage1 { dataset } => commands::stage1(&effective_config(cli)?, dataset, &cli.out),
        Command::Stage2 { stage1_run, rvs } => {
            let mut cfg = effective_config(cli)?;
            if let Some(m) = rvs {
                cfg.stage2.rvs.multiplier = *m;
            }
            commands::stage2(&cfg, stage1_run, &cli.out)
        }
        Command::Eval {
            estimate,
            ground_truth,
            align,
        } => commands::eval(estimate, ground_truth, *align),
        Command::Selfcheck => {
            let reports = selfcheck::run_all(cli.seed.unwrap_or(0));
            let pass = reports.iter().all(|r| r.pass);
            let out = json!({ "pass": pass, "suites": reports });
            if pass {
                Ok(out)
            } else {
                println!("{out}");
                let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.name).collect();
                Err(CliError::msg(ExitCode::Failure, format!("failed suites: {}", failed.join(", "))))
            }
        }
    }
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WSCLOC_LOG", "info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            error!("cannot configure the thread pool: {e}");
        }
    }
    match dispatch(&cli) {
        Ok(v) => println!("{v}"),
        Err(e) => {
            error!("{:#}", e.error);
            std::process::exit(e.code as i32);
        }
    }
}

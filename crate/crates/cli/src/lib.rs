//! `gridpop` subcommands over a JSON run configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use pipeline::{CliError, CliResult, Overrides, Run};

#[derive(Debug, Parser)]
#[command(
    name = "gridpop",
    version,
    about = "Gridded population estimation from survey counts and remote-sensing features"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Output directory, overriding the configured one.
    #[arg(long, env = "GRIDPOP_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the configuration and its inputs.
    Validate(Common),
    /// Build the feature table.
    Features(Common),
    /// Nested spatial cross-validation; writes fold models and pooled predictions.
    Train(Common),
    /// Metrics over pooled predictions, with the null model for reference.
    Evaluate(Common),
    /// Apply a fitted model to every tile of one ROI.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        roi: String,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Validate(c) | Command::Features(c) | Command::Train(c) | Command::Evaluate(c) => c,
            Command::Predict { common, .. } => common,
        }
    }
}

fn dispatch(command: &Command) -> CliResult<String> {
    let common = command.common();
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
    };
    let run = Run::load(&common.config, &overrides)?;
    Ok(match command {
        Command::Validate(_) => pipeline::cmd_validate(&run)?.to_string(),
        Command::Features(_) => {
            let t = pipeline::cmd_features(&run)?;
            format!("features: {} tiles x {} columns", t.n_rows(), t.n_columns())
        }
        Command::Train(_) => {
            let t = pipeline::cmd_train(&run)?;
            format!(
                "train: {} fold models, {} pooled predictions",
                t.models.len(),
                t.predictions.len()
            )
        }
        Command::Evaluate(_) => {
            let report = pipeline::cmd_evaluate(&run)?;
            let mut lines = Vec::new();
            for row in &report.rows {
                let m = &row.metrics;
                lines.push(format!(
                    "{:<10} R2={:.4} MeAPE={:.2}% aMeAPE={:.4} MeAE={:.3} AggPE={:.2}%",
                    row.model, m.r2, m.meape, m.ameape, m.meae, m.aggpe
                ));
            }
            lines.join("\n")
        }
        Command::Predict { model, roi, .. } => {
            let values = pipeline::cmd_predict(&run, model, roi)?;
            let n = values.iter().flatten().count();
            format!("predict: {n} of {} tiles of `{roi}`", values.len())
        }
    })
}

/// Runs one parsed invocation and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let threads = cli.command.common().threads;
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

//! Argument parsing and dispatch for the `tps` binary, kept in the library so
//! the same path can be driven in-process.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use tps_core::ModelConfig;

use crate::commands;
use crate::error::CliError;
use crate::{Overrides, Resolved, Result, RunConfig};

#[derive(Parser)]
#[command(name = "tps", version, about = "Token pruning and squeezing experiments for vision transformers")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one forward pass and report logits and the per-stage token trace.
    Forward(Common),
    /// Report the analytical multiply-accumulate cost.
    Flops(Common),
    /// Run vanilla, prune, reorganize and tps on the same input.
    Compare(Common),
    /// Swap reserved and pruned tokens at the first stage.
    Reverse(Common),
    /// Compare random selection policies against the scored one.
    Robustness(Robustness),
    /// Write a seeded weight fixture.
    GenWeights(GenWeights),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight fixture manifest.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// json or csv.
    #[arg(long)]
    format: Option<String>,
    /// Model preset (deit-tiny, deit-small).
    #[arg(long)]
    model: Option<String>,
    /// Pruning locations, e.g. 4,7,10.
    #[arg(long)]
    locations: Option<String>,
    #[arg(long)]
    keep_ratio: Option<f64>,
    /// vanilla, prune, reorganize or tps.
    #[arg(long)]
    mode: Option<String>,
    /// dtps or etps.
    #[arg(long)]
    variant: Option<String>,
    /// cosine or previous_attention.
    #[arg(long)]
    similarity: Option<String>,
    /// full, content or position.
    #[arg(long)]
    features: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Image tensor fixture instead of a seeded random batch.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Comma-separated ground-truth classes, one per batch item.
    #[arg(long)]
    labels: Option<String>,
}

#[derive(Args)]
struct Robustness {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    trials: Option<usize>,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct GenWeights {
    #[arg(long, default_value = "deit-small")]
    model: String,
    #[arg(long, default_value_t = crate::config::DEFAULT_WEIGHTS_SEED)]
    seed: u64,
    /// Manifest path; the blob is written next to it with a .bin extension.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn run_config(self, trials: Option<usize>) -> Result<RunConfig> {
        RunConfig::load(
            self.config.as_deref(),
            Overrides {
                weights: self.weights,
                seed: self.seed,
                out: self.out,
                format: self.format,
                model: self.model,
                locations: self.locations,
                keep_ratio: self.keep_ratio,
                mode: self.mode,
                variant: self.variant,
                similarity_source: self.similarity,
                feature_type: self.features,
                batch_size: self.batch_size,
                input: self.input,
                labels: self.labels,
                trials,
            },
        )
    }
}

/// What a successful run produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    /// Bytes destined for stdout; empty when the report went to `--out`.
    pub stdout: Vec<u8>,
    pub warnings: Vec<String>,
}

/// Runs one parsed command line.
pub fn execute(cli: Cli) -> Result<Output> {
    let (report, run) = match cli.command {
        Command::Forward(c) => {
            let res = Resolved::load(c.run_config(None)?)?;
            (commands::forward(&res)?, res.run)
        }
        Command::Compare(c) => {
            let res = Resolved::load(c.run_config(None)?)?;
            (commands::compare(&res)?, res.run)
        }
        Command::Reverse(c) => {
            let res = Resolved::load(c.run_config(None)?)?;
            (commands::reverse(&res)?, res.run)
        }
        Command::Flops(c) => {
            let run = c.run_config(None)?;
            (commands::flops(&run)?, run)
        }
        Command::Robustness(r) => {
            let res = Resolved::load(r.common.run_config(r.trials)?)?;
            (commands::robustness(&res, !r.sequential)?, res.run)
        }
        Command::GenWeights(g) => {
            let model = ModelConfig::preset(&g.model)?;
            let result = commands::gen_weights(&model, g.seed, &g.out)?;
            let mut json = serde_json::to_string_pretty(&result).expect("result serializes");
            json.push('\n');
            return Ok(Output { stdout: json.into_bytes(), warnings: Vec::new() });
        }
    };
    let text = report.render(run.format);
    let stdout = match &run.out {
        Some(path) => {
            fs::write(path, text).map_err(|e| CliError::io(path, e))?;
            Vec::new()
        }
        None => text.into_bytes(),
    };
    Ok(Output { stdout, warnings: report.warnings })
}

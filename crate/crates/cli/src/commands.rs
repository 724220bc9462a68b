//! The experiment protocols behind each subcommand.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use tps_core::fixture::{load_weights, save_weights};
use tps_core::flops::{model_macs, FlopsReport};
use tps_core::policy::{bonus_accuracy, BonusAccuracy, TokenPartition};
use tps_core::{
    model_forward_with_policy, ForwardOutput, Matrix, Mode, ModelConfig, ModelWeights, PolicyOverride,
    PolicyTrace, PruneSchedule,
};

use crate::config::{Resolved, RunConfig};
use crate::error::{CliError, Result};
use crate::report::Report;

/// Top-1 class per row; ties go to the lower class index.
pub fn predictions(logits: &Matrix) -> Vec<usize> {
    logits
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Euclidean distance between matching rows.
pub fn row_distances(a: &Matrix, b: &Matrix) -> Vec<f64> {
    a.iter_rows()
        .zip(b.iter_rows())
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Population standard deviation.
fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    mean(&v.iter().map(|x| (x - m).powi(2)).collect::<Vec<_>>()).sqrt()
}

pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

fn run(res: &Resolved, mode: Mode, policy: PolicyOverride) -> Result<ForwardOutput> {
    Ok(model_forward_with_policy(
        &res.images,
        &res.model,
        &res.weights,
        &res.schedule,
        mode,
        policy,
    )?)
}

fn report(command: &'static str, res: &Resolved, result: impl Serialize) -> Report {
    let mut r = Report::new(command, &res.run, result);
    r.weights_checksum = Some(res.weights.checksum());
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardResult {
    pub mode: Mode,
    pub model: ModelConfig,
    pub schedule: PruneSchedule,
    pub logits: Vec<Vec<f32>>,
    pub predictions: Vec<usize>,
    pub trace: PolicyTrace,
}

pub fn forward(res: &Resolved) -> Result<Report> {
    let out = run(res, res.run.mode, PolicyOverride::Scored)?;
    Ok(report(
        "forward",
        res,
        ForwardResult {
            mode: res.run.mode,
            model: res.model.clone(),
            schedule: res.schedule.clone(),
            predictions: predictions(&out.logits),
            logits: out.logits.iter_rows().map(<[f32]>::to_vec).collect(),
            trace: out.trace,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopsResult {
    pub model: ModelConfig,
    /// `None` for the unpruned model.
    pub schedule: Option<PruneSchedule>,
    pub flops: FlopsReport,
}

/// Cost of the configured model and schedule. Vanilla mode, or an empty
/// location list, costs the unpruned model. Needs no weights.
pub fn flops(run: &RunConfig) -> Result<Report> {
    let model = match (&run.model, &run.weights) {
        (None, Some(path)) => load_weights(path)?.0,
        _ => run.model_config()?,
    };
    let schedule = run.schedule(model.depth)?;
    let pruned = run.mode != Mode::Vanilla && !schedule.locations.is_empty();
    let effective = if pruned { schedule.clone() } else { PruneSchedule::none() };
    let flops = model_macs(&model, &effective)?;
    Ok(Report::new(
        "flops",
        run,
        FlopsResult {
            model,
            schedule: pruned.then_some(schedule),
            flops,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeRun {
    pub mode: Mode,
    pub token_counts: Vec<usize>,
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distance {
    pub a: Mode,
    pub b: Mode,
    /// Mean over the batch of the per-item logit L2 distance.
    pub mean_l2: f64,
    pub max_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    pub mode: Mode,
    pub top1_vs_vanilla: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareResult {
    pub schedule: PruneSchedule,
    pub modes: Vec<ModeRun>,
    pub distances: Vec<Distance>,
    pub agreement: Vec<Agreement>,
    /// Squeezed logits landed no farther from vanilla than dropped ones.
    pub tps_closer_than_prune: bool,
}

pub fn compare(res: &Resolved) -> Result<Report> {
    let outs = Mode::ALL
        .iter()
        .map(|&m| run(res, m, PolicyOverride::Scored))
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<Vec<usize>> = outs.iter().map(|o| predictions(&o.logits)).collect();
    let mut distances = Vec::new();
    for i in 0..outs.len() {
        for j in i + 1..outs.len() {
            let d = row_distances(&outs[i].logits, &outs[j].logits);
            distances.push(Distance {
                a: Mode::ALL[i],
                b: Mode::ALL[j],
                mean_l2: mean(&d),
                max_l2: d.iter().cloned().fold(0.0, f64::max),
            });
        }
    }
    let to_vanilla = |m: Mode| {
        distances
            .iter()
            .find(|d| d.a == Mode::Vanilla && d.b == m)
            .map(|d| d.mean_l2)
            .expect("vanilla pairs present")
    };
    let tps_closer_than_prune = to_vanilla(Mode::Tps) <= to_vanilla(Mode::Prune);
    Ok(report(
        "compare",
        res,
        CompareResult {
            schedule: res.schedule.clone(),
            modes: Mode::ALL
                .iter()
                .zip(&outs)
                .zip(&preds)
                .map(|((&mode, o), p)| ModeRun {
                    mode,
                    token_counts: o.trace.token_counts(),
                    predictions: p.clone(),
                })
                .collect(),
            agreement: Mode::ALL
                .iter()
                .zip(&preds)
                .map(|(&mode, p)| Agreement {
                    mode,
                    top1_vs_vanilla: agreement(p, &preds[0]),
                })
                .collect(),
            distances,
            tps_closer_than_prune,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyRun {
    pub predictions: Vec<usize>,
    pub token_counts: Vec<usize>,
    /// First-stage partition per batch item.
    pub first_stage: Vec<TokenPartition>,
}

impl PolicyRun {
    fn of(out: &ForwardOutput) -> Self {
        Self {
            predictions: predictions(&out.logits),
            token_counts: out.trace.token_counts(),
            first_stage: out.trace.stages[0].partitions.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReverseResult {
    pub mode: Mode,
    pub original: PolicyRun,
    pub reversed: PolicyRun,
    /// Present only when labels were supplied.
    pub bonus: Option<BonusAccuracy>,
}

pub fn reverse(res: &Resolved) -> Result<Report> {
    let mode = res.run.mode;
    if mode == Mode::Vanilla || res.schedule.locations.is_empty() {
        return Err(CliError::Config("reverse needs a non-vanilla mode and at least one stage".into()));
    }
    let original = PolicyRun::of(&run(res, mode, PolicyOverride::Scored)?);
    let reversed = PolicyRun::of(&run(res, mode, PolicyOverride::ReverseFirst)?);
    let mut warnings = Vec::new();
    let bonus = match &res.run.labels {
        Some(labels) => Some(bonus_accuracy(&original.predictions, &reversed.predictions, labels)?),
        None => {
            warnings.push("no labels supplied; bonus accuracy omitted".to_string());
            None
        }
    };
    let mut r = report(
        "reverse",
        res,
        ReverseResult {
            mode,
            original,
            reversed,
            bonus,
        },
    );
    r.warnings = warnings;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialStat {
    pub seed: u64,
    pub mean_l2: f64,
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeStats {
    pub mode: Mode,
    pub l2_mean: f64,
    pub l2_std: f64,
    pub agreement_mean: f64,
    pub agreement_std: f64,
    pub trials: Vec<TrialStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessResult {
    pub trials: usize,
    pub base_seed: u64,
    pub schedule: PruneSchedule,
    pub modes: Vec<ModeStats>,
}

pub const ROBUSTNESS_MODES: [Mode; 3] = [Mode::Prune, Mode::Reorganize, Mode::Tps];

/// Divergence of random-policy runs from the scored policy, per mode. Trial
/// `t` uses seed `base + t`; results are gathered by trial index, so the
/// parallel and sequential paths produce identical reports.
pub fn robustness(res: &Resolved, parallel: bool) -> Result<Report> {
    let trials = res.run.trials;
    if trials == 0 {
        return Err(CliError::Config("robustness needs at least one trial".into()));
    }
    let base = res.run.seed;
    let originals = ROBUSTNESS_MODES
        .iter()
        .map(|&m| run(res, m, PolicyOverride::Scored))
        .collect::<Result<Vec<_>>>()?;

    let trial = |t: usize| -> Result<Vec<TrialStat>> {
        let seed = base.wrapping_add(t as u64);
        ROBUSTNESS_MODES
            .iter()
            .zip(&originals)
            .map(|(&m, orig)| {
                let out = run(res, m, PolicyOverride::Random { seed })?;
                Ok(TrialStat {
                    seed,
                    mean_l2: mean(&row_distances(&orig.logits, &out.logits)),
                    agreement: agreement(&predictions(&orig.logits), &predictions(&out.logits)),
                })
            })
            .collect()
    };
    let per_trial: Vec<Vec<TrialStat>> = if parallel {
        (0..trials).into_par_iter().map(trial).collect::<Result<_>>()?
    } else {
        (0..trials).map(trial).collect::<Result<_>>()?
    };

    let modes = ROBUSTNESS_MODES
        .iter()
        .enumerate()
        .map(|(k, &mode)| {
            let stats: Vec<TrialStat> = per_trial.iter().map(|t| t[k].clone()).collect();
            let l2: Vec<f64> = stats.iter().map(|s| s.mean_l2).collect();
            let agree: Vec<f64> = stats.iter().map(|s| s.agreement).collect();
            ModeStats {
                mode,
                l2_mean: mean(&l2),
                l2_std: std_dev(&l2),
                agreement_mean: mean(&agree),
                agreement_std: std_dev(&agree),
                trials: stats,
            }
        })
        .collect();
    Ok(report(
        "robustness",
        res,
        RobustnessResult {
            trials,
            base_seed: base,
            schedule: res.schedule.clone(),
            modes,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenWeightsResult {
    pub model: ModelConfig,
    pub seed: u64,
    pub path: String,
    pub checksum: String,
    pub tensors: usize,
}

/// Writes a seeded weight fixture.
pub fn gen_weights(model: &ModelConfig, seed: u64, path: &Path) -> Result<GenWeightsResult> {
    let weights = ModelWeights::random(model, seed)?;
    save_weights(path, model, &weights)?;
    Ok(GenWeightsResult {
        model: model.clone(),
        seed,
        path: path.display().to_string(),
        checksum: weights.checksum(),
        tensors: weights.tensors().len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_ties_take_lower_class() {
        let m = Matrix::from_rows(&[[1.0, 3.0, 3.0], [2.0, 0.0, 1.0]]).unwrap();
        assert_eq!(predictions(&m), vec![1, 0]);
    }

    #[test]
    fn distances_and_stats() {
        let a = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0, 4.0], [1.0, 1.0]]).unwrap();
        assert_eq!(row_distances(&a, &b), vec![5.0, 0.0]);
        assert_eq!(mean(&[5.0, 0.0]), 2.5);
        assert_eq!(std_dev(&[5.0, 0.0]), 2.5);
        assert_eq!(agreement(&[1, 2, 3, 4], &[1, 0, 3, 0]), 0.5);
    }
}

//! Synthetic label corruption: does curvature single out the flipped samples?

use serde::{Deserialize, Serialize};

use super::{run_training_with, ExperimentConfig, HistoryRow, TrainingOutcome};
use crate::error::{Error, Result};
use crate::metrics::{auroc, descending_ranks, histogram, HistogramScale};
use crate::scalar::Scalar;

/// Train accuracy a corruption run must reach before AUROCs are reported.
pub const MEMORIZATION_ACCURACY: f64 = 0.995;

const HISTOGRAM_BINS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionHistogram {
    /// Log-spaced bin edges over the cumulative curvature scores.
    pub edges: Vec<f64>,
    pub all: Vec<usize>,
    pub corrupted: Vec<usize>,
    /// Scores equal to zero, which fall outside a log scale.
    pub zero_scores: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSummary {
    pub fraction: f64,
    pub num_samples: usize,
    pub num_corrupted: usize,
    pub train_accuracy: f64,
    /// `train_accuracy >= MEMORIZATION_ACCURACY`.
    pub memorized: bool,
    pub status: String,
    /// `None` unless memorized.
    pub curvature_auroc: Option<f64>,
    pub inconfidence_auroc: Option<f64>,
    pub mean_curvature_corrupted: f64,
    pub mean_curvature_clean: f64,
    /// Median over corrupted samples of `(rank + 1) / N`, rank 0 being the highest score.
    pub median_corrupted_rank_fraction: f64,
    pub histogram: CorruptionHistogram,
}

#[derive(Debug, Clone)]
pub struct CorruptionOutcome<T> {
    pub training: TrainingOutcome<T>,
    pub summary: CorruptionSummary,
}

fn mean_where(scores: &[f64], mask: &[bool], want: bool) -> f64 {
    let (sum, n) = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m == want)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Summarizes a finished corruption run.
pub fn summarize_corruption<T: Scalar>(out: &TrainingOutcome<T>) -> Result<CorruptionSummary> {
    let mask = out
        .mask
        .as_ref()
        .ok_or_else(|| Error::config("corruption summary needs a corruption mask"))?;
    let scores = &out.curvature.scores;
    let n = scores.len();
    let flags = &mask.mask;
    let train_accuracy = out.final_row().train_accuracy;
    let memorized = train_accuracy >= MEMORIZATION_ACCURACY;
    let (curvature_auroc, inconfidence_auroc) = if memorized {
        (
            Some(auroc(scores, flags)?),
            Some(auroc(&out.inconfidence.scores, flags)?),
        )
    } else {
        (None, None)
    };
    let ranks = descending_ranks(scores);
    let corrupted_ranks: Vec<f64> = ranks
        .iter()
        .zip(flags)
        .filter(|(_, &m)| m)
        .map(|(&r, _)| (r + 1) as f64 / n as f64)
        .collect();
    let hist = histogram(scores, HISTOGRAM_BINS, HistogramScale::Log)?;
    let corrupted = hist.count_masked(scores, flags);
    Ok(CorruptionSummary {
        fraction: mask.fraction,
        num_samples: n,
        num_corrupted: mask.num_corrupted(),
        train_accuracy,
        memorized,
        status: if memorized { "memorized" } else { "not memorized" }.to_string(),
        curvature_auroc,
        inconfidence_auroc,
        mean_curvature_corrupted: mean_where(scores, flags, true),
        mean_curvature_clean: mean_where(scores, flags, false),
        median_corrupted_rank_fraction: median(corrupted_ranks),
        histogram: CorruptionHistogram {
            edges: hist.edges,
            all: hist.counts,
            corrupted,
            zero_scores: hist.underflow,
        },
    })
}

/// Corrupts labels per `cfg.corruption_fraction`, trains, and scores the mask.
pub fn run_corruption_experiment<T: Scalar>(cfg: &ExperimentConfig) -> Result<CorruptionOutcome<T>> {
    run_corruption_experiment_with(cfg, &mut |_| {})
}

pub fn run_corruption_experiment_with<T: Scalar>(
    cfg: &ExperimentConfig,
    progress: &mut dyn FnMut(&HistoryRow),
) -> Result<CorruptionOutcome<T>> {
    if cfg.corruption_fraction.is_none() {
        return Err(Error::config("corruption experiment needs a corruption fraction"));
    }
    let training = run_training_with::<T>(cfg, progress)?;
    let summary = summarize_corruption(&training)?;
    Ok(CorruptionOutcome { training, summary })
}

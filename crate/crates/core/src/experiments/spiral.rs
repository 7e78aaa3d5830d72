//! Curvature dynamics on the two-spiral toy problem.

use serde::{Deserialize, Serialize};

use super::{run_training_with, DatasetSpec, ExperimentConfig, HistoryRow, TrainingOutcome};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shape of a per-epoch mean-curvature series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    /// Earliest epoch attaining the maximum.
    pub peak_epoch: usize,
    pub peak_mean: f64,
    pub final_epoch: usize,
    pub final_mean: f64,
    /// `3 <= peak_epoch <= 0.8 T` and `final_mean < peak_mean`.
    pub rise_then_fall: bool,
}

/// Verdict over `(epoch, mean curvature)` pairs from a `total_epochs` run.
/// `None` for an empty series.
pub fn trend_verdict(series: &[(usize, f64)], total_epochs: usize) -> Option<TrendVerdict> {
    let &(final_epoch, final_mean) = series.last()?;
    let mut peak = series[0];
    for &(e, v) in &series[1..] {
        if v > peak.1 {
            peak = (e, v);
        }
    }
    let in_window = peak.0 >= 3 && peak.0 as f64 <= 0.8 * total_epochs as f64;
    Some(TrendVerdict {
        peak_epoch: peak.0,
        peak_mean: peak.1,
        final_epoch,
        final_mean,
        rise_then_fall: in_window && final_mean < peak.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralSummary {
    pub verdict: TrendVerdict,
    pub first_train_loss: f64,
    pub final_train_loss: f64,
    pub heldout_first: Option<f64>,
    pub heldout_final: Option<f64>,
    /// Held-out mean curvature at the last scored epoch exceeds the first.
    pub heldout_increased: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct SpiralOutcome<T> {
    pub training: TrainingOutcome<T>,
    pub summary: SpiralSummary,
}

pub fn run_spiral_dynamics<T: Scalar>(cfg: &ExperimentConfig) -> Result<SpiralOutcome<T>> {
    run_spiral_dynamics_with(cfg, &mut |_| {})
}

pub fn run_spiral_dynamics_with<T: Scalar>(
    cfg: &ExperimentConfig,
    progress: &mut dyn FnMut(&HistoryRow),
) -> Result<SpiralOutcome<T>> {
    if !matches!(cfg.dataset, DatasetSpec::Spiral(_)) {
        return Err(Error::config("spiral dynamics needs a spiral dataset"));
    }
    let training = run_training_with::<T>(cfg, progress)?;
    let series = training.history.curvature_series();
    let verdict = trend_verdict(&series, cfg.epochs).expect("at least one scored epoch");
    let held = training.history.heldout_series();
    let heldout_first = held.first().map(|p| p.1);
    let heldout_final = held.last().map(|p| p.1);
    let rows = &training.history.rows;
    let summary = SpiralSummary {
        verdict,
        first_train_loss: rows[0].train_loss,
        final_train_loss: training.final_row().train_loss,
        heldout_first,
        heldout_final,
        heldout_increased: heldout_first.zip(heldout_final).map(|(a, b)| b > a),
    };
    Ok(SpiralOutcome { training, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::ProbeSchedule;

    fn series(values: &[f64]) -> Vec<(usize, f64)> {
        values.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect()
    }

    #[test]
    fn rise_then_fall() {
        let v = trend_verdict(&series(&[1.0, 2.0, 3.0, 5.0, 4.0, 3.0, 2.0, 2.0, 2.0, 1.0]), 10).unwrap();
        assert_eq!(v.peak_epoch, 4);
        assert!(v.rise_then_fall);
    }

    #[test]
    fn constant_series_has_no_trend() {
        let v = trend_verdict(&series(&[2.0; 20]), 20).unwrap();
        assert_eq!(v.peak_epoch, 1);
        assert!(!v.rise_then_fall);
    }

    #[test]
    fn late_or_early_peaks_fail() {
        assert!(!trend_verdict(&series(&[5.0, 4.0, 3.0, 2.0, 1.0]), 5).unwrap().rise_then_fall);
        // Peak at epoch 9 of 10 is past 0.8 T.
        let late = series(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 8.5]);
        assert!(!trend_verdict(&late, 10).unwrap().rise_then_fall);
        // Peak inside the window but no decrease afterwards.
        let flat = series(&[1.0, 2.0, 3.0, 4.0, 4.0]);
        let v = trend_verdict(&flat, 5).unwrap();
        assert_eq!(v.peak_epoch, 4);
        assert!(!v.rise_then_fall);
    }

    #[test]
    fn strided_series_uses_epoch_numbers() {
        let s = vec![(1, 1.0), (5, 3.0), (9, 2.0)];
        let v = trend_verdict(&s, 10).unwrap();
        assert_eq!(v.peak_epoch, 5);
        assert!(v.rise_then_fall);
        assert!(trend_verdict(&[], 10).is_none());
    }

    #[test]
    fn frozen_network_has_flat_series() {
        // Without batch norm, running statistics cannot drift at lr = 0, and
        // fixed probes remove the epoch-to-epoch estimator noise.
        let mut cfg = ExperimentConfig::spiral(0);
        cfg.optimizer.learning_rate = 0.0;
        cfg.network.batchnorm = false;
        cfg.curvature.probe_schedule = ProbeSchedule::Fixed;
        cfg.heldout_curvature = false;
        cfg.epochs = 20;
        let out = run_spiral_dynamics::<f64>(&cfg).unwrap();
        let series = out.training.history.curvature_series();
        assert_eq!(series.len(), 20);
        assert!(series.iter().all(|&(_, v)| v == series[0].1));
        assert_eq!(out.summary.verdict.peak_epoch, 1);
        assert!(!out.summary.verdict.rise_then_fall);
    }

    #[test]
    fn rejects_other_datasets() {
        let cfg = crate::experiments::tests::blob_config(1);
        assert!(run_spiral_dynamics::<f64>(&cfg).unwrap_err().is_config_error());
    }
}

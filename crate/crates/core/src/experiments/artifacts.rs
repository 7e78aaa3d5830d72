//! Run directories: score CSVs, history, corruption mask and the JSON summary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CompareSummary, CorruptionSummary, ExperimentConfig, RunHistory, SpiralSummary, TrainingOutcome};
use crate::error::{Error, Result};
use crate::metrics::Histogram;
use crate::scalar::Scalar;

/// Identifier stored in every `summary.json`.
pub const SUMMARY_SCHEMA: &str = "curvd.summary.v1";

/// Machine summary of one invocation. Contains nothing that varies between
/// identical runs, so wall time is not recorded here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub experiment: String,
    pub config_digest: String,
    pub num_samples: usize,
    pub epochs: usize,
    pub epochs_scored: usize,
    pub final_train_loss: Option<f64>,
    pub final_train_accuracy: Option<f64>,
    pub mean_curvature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<CorruptionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spiral: Option<SpiralSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<RankedSample>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Histogram>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSample {
    pub rank: usize,
    pub index: usize,
    pub label: usize,
    pub score: f64,
}

impl RunSummary {
    pub fn new(experiment: &str, config_digest: &str) -> Self {
        Self {
            schema: SUMMARY_SCHEMA.to_string(),
            experiment: experiment.to_string(),
            config_digest: config_digest.to_string(),
            num_samples: 0,
            epochs: 0,
            epochs_scored: 0,
            final_train_loss: None,
            final_train_accuracy: None,
            mean_curvature: None,
            corruption: None,
            spiral: None,
            compare: None,
            ranking: None,
            histogram: None,
            notes: Vec::new(),
        }
    }

    /// Fills the fields shared by every training run.
    pub fn from_training<T: Scalar>(experiment: &str, cfg: &ExperimentConfig, out: &TrainingOutcome<T>) -> Self {
        let last = out.final_row();
        let scores = &out.curvature.scores;
        let mut s = Self::new(experiment, &out.config_digest);
        s.num_samples = scores.len();
        s.epochs = cfg.epochs;
        s.epochs_scored = out.curvature.epochs_averaged;
        s.final_train_loss = Some(last.train_loss);
        s.final_train_accuracy = Some(last.train_accuracy);
        s.mean_curvature = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        s
    }

    /// Every floating-point field, named.
    fn floats(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        let mut opt = |name, v: Option<f64>| out.extend(v.map(|v| (name, v)));
        opt("final_train_loss", self.final_train_loss);
        opt("final_train_accuracy", self.final_train_accuracy);
        opt("mean_curvature", self.mean_curvature);
        if let Some(c) = &self.corruption {
            opt("corruption.curvature_auroc", c.curvature_auroc);
            opt("corruption.inconfidence_auroc", c.inconfidence_auroc);
            out.push(("corruption.fraction", c.fraction));
            out.push(("corruption.train_accuracy", c.train_accuracy));
            out.push(("corruption.mean_curvature_corrupted", c.mean_curvature_corrupted));
            out.push(("corruption.mean_curvature_clean", c.mean_curvature_clean));
            out.push(("corruption.median_corrupted_rank_fraction", c.median_corrupted_rank_fraction));
            out.extend(c.histogram.edges.iter().map(|&e| ("corruption.histogram.edges", e)));
        }
        if let Some(s) = &self.spiral {
            out.push(("spiral.verdict.peak_mean", s.verdict.peak_mean));
            out.push(("spiral.verdict.final_mean", s.verdict.final_mean));
            out.push(("spiral.first_train_loss", s.first_train_loss));
            out.push(("spiral.final_train_loss", s.final_train_loss));
            let mut opt = |name, v: Option<f64>| out.extend(v.map(|v| (name, v)));
            opt("spiral.heldout_first", s.heldout_first);
            opt("spiral.heldout_final", s.heldout_final);
        }
        if let Some(c) = &self.compare {
            out.push(("compare.full_cosine", c.full_cosine));
            out.extend(c.top_k.iter().map(|t| ("compare.top_k.cosine", t.cosine)));
        }
        if let Some(r) = &self.ranking {
            out.extend(r.iter().map(|x| ("ranking.score", x.score)));
        }
        if let Some(h) = &self.histogram {
            out.extend(h.edges.iter().map(|&e| ("histogram.edges", e)));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        if let Some((name, v)) = self.floats().into_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Consistency(format!("summary field {name} is {v}")));
        }
        let value = serde_json::to_value(self)?;
        check_summary(&value)?;
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }
}

/// Checks a parsed summary: schema tag, required keys, and that every number
/// is finite (non-finite floats would serialize as `null`).
pub fn check_summary(value: &Value) -> Result<()> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Consistency("summary is not a JSON object".into()))?;
    if obj.get("schema").and_then(Value::as_str) != Some(SUMMARY_SCHEMA) {
        return Err(Error::Consistency(format!("summary schema must be {SUMMARY_SCHEMA}")));
    }
    for key in ["experiment", "config_digest", "num_samples", "epochs", "epochs_scored"] {
        if !obj.contains_key(key) {
            return Err(Error::Consistency(format!("summary is missing `{key}`")));
        }
    }
    fn walk(v: &Value, path: &str) -> Result<()> {
        match v {
            Value::Number(n) if n.as_f64().is_some_and(|f| !f.is_finite()) => {
                Err(Error::Consistency(format!("non-finite number at {path}")))
            }
            Value::Array(a) => a.iter().enumerate().try_for_each(|(i, x)| walk(x, &format!("{path}[{i}]"))),
            Value::Object(o) => o.iter().try_for_each(|(k, x)| walk(x, &format!("{path}.{k}"))),
            _ => Ok(()),
        }
    }
    walk(value, "$")
}

fn write_file(dir: &Path, name: &str, contents: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

pub fn write_history_csv(path: &Path, history: &RunHistory) -> Result<()> {
    fs::write(path, history.to_csv()).map_err(|e| Error::io(path, e))
}

/// Writes `config.json`, `scores_curvature.csv`, `scores_inconfidence.csv`,
/// `history.csv`, `mask.csv` (corruption runs only) and `summary.json` into `dir`,
/// creating it if needed. Returns the written paths.
pub fn write_run<T: Scalar>(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &TrainingOutcome<T>,
    summary: &RunSummary,
) -> Result<Vec<PathBuf>> {
    let summary_json = summary.to_json()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut canonical = cfg.clone();
    canonical.out_dir = None;
    let config_json = serde_json::to_string_pretty(&canonical)? + "\n";
    write_file(dir, "config.json", config_json.as_bytes(), &mut written)?;
    write_file(dir, "scores_curvature.csv", out.curvature.to_csv_string().as_bytes(), &mut written)?;
    write_file(dir, "scores_inconfidence.csv", out.inconfidence.to_csv_string().as_bytes(), &mut written)?;
    write_file(dir, "history.csv", out.history.to_csv().as_bytes(), &mut written)?;
    if let Some(mask) = &out.mask {
        write_file(dir, "mask.csv", mask.to_csv().as_bytes(), &mut written)?;
    }
    write_file(dir, "summary.json", summary_json.as_bytes(), &mut written)?;
    Ok(written)
}

/// Writes `summary.json` alone.
pub fn write_summary(dir: &Path, summary: &RunSummary) -> Result<PathBuf> {
    let json = summary.to_json()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("summary.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::tests::blob_config;
    use crate::experiments::run_training;

    #[test]
    fn summary_round_trips_and_checks() {
        let mut s = RunSummary::new("score", "abc");
        s.mean_curvature = Some(0.5);
        let json = s.to_json().unwrap();
        let back: RunSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        s.mean_curvature = Some(f64::NAN);
        assert!(s.to_json().is_err());
        assert!(check_summary(&serde_json::json!({"schema": "other"})).is_err());
    }

    #[test]
    fn run_directory_is_reproducible() {
        let cfg = blob_config(2);
        let dir = tempfile::tempdir().unwrap();
        let mut contents = Vec::new();
        for name in ["a", "b"] {
            let out = run_training::<f64>(&cfg).unwrap();
            let summary = RunSummary::from_training("score", &cfg, &out);
            let files = write_run(&dir.path().join(name), &cfg, &out, &summary).unwrap();
            assert_eq!(files.len(), 5);
            contents.push(files.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>());
        }
        assert_eq!(contents[0], contents[1]);
    }
}

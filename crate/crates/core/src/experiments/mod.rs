//! Training runs with per-epoch curvature scoring, and the experiments built on them.

mod artifacts;
mod compare;
mod corruption;
mod spiral;

pub use artifacts::{
    check_summary, write_history_csv, write_run, write_summary, RankedSample, RunSummary, SUMMARY_SCHEMA,
};
pub use compare::{compare_scores, default_top_k, CompareSummary, TopKCosine};
pub use corruption::{
    run_corruption_experiment, run_corruption_experiment_with, summarize_corruption, CorruptionHistogram, CorruptionOutcome, CorruptionSummary,
    MEMORIZATION_ACCURACY,
};
pub use spiral::{run_spiral_dynamics, run_spiral_dynamics_with, trend_verdict, SpiralOutcome, SpiralSummary, TrendVerdict};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curvature::{mean_score, score_dataset, CurvatureConfig, CurvatureLedger};
use crate::datasets::{
    corrupt_labels, gen_blobs, gen_spiral, load_mnist_idx, BlobsConfig, CorruptionMask, Dataset, Normalizer,
    SpiralConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{format_f64, inconfidence_from_logits, ScoreKind, ScoreReport};
use crate::nn::{init_network, loss, Mode, Network, NetworkSpec, OptimizerConfig, Velocity};
use crate::scalar::Scalar;

/// Rows per forward pass when evaluating a whole dataset.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        /// Keep the first `subset / C` samples of each class.
        #[serde(default)]
        subset: Option<usize>,
        #[serde(default)]
        heldout_images: Option<PathBuf>,
        #[serde(default)]
        heldout_labels: Option<PathBuf>,
    },
    Spiral(SpiralConfig),
    Blobs(BlobsConfig),
}

impl DatasetSpec {
    /// `train-{images-idx3,labels-idx1}-ubyte` inside `dir`.
    pub fn mnist_dir(dir: &Path, subset: Option<usize>) -> Self {
        let t10k_images = dir.join("t10k-images-idx3-ubyte");
        let t10k_labels = dir.join("t10k-labels-idx1-ubyte");
        let heldout = t10k_images.exists() && t10k_labels.exists();
        DatasetSpec::Mnist {
            images: dir.join("train-images-idx3-ubyte"),
            labels: dir.join("train-labels-idx1-ubyte"),
            subset,
            heldout_images: heldout.then_some(t10k_images),
            heldout_labels: heldout.then_some(t10k_labels),
        }
    }
}

/// Hidden layers of the classifier; input and output widths come from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub batchnorm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// `None` trains on the full dataset as a single batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub curvature: CurvatureConfig,
    /// Score epochs `1, 1 + stride, 1 + 2 stride, ...`.
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub corruption_fraction: Option<f64>,
    /// Normalize inputs by the training set's pixel mean and standard deviation.
    #[serde(default)]
    pub normalize: bool,
    /// Also record the mean curvature of the held-out set each scored epoch.
    #[serde(default)]
    pub heldout_curvature: bool,
    /// Keep every per-epoch score vector in the ledger.
    #[serde(default)]
    pub keep_epoch_scores: bool,
    pub seed: u64,
    /// Not part of the configuration digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    /// Seven fully connected layers with batch norm on a 15+15 point spiral,
    /// 150 full-batch epochs of SGD (lr 0.1, momentum 0.9, weight decay 5e-4).
    pub fn spiral(seed: u64) -> Self {
        Self {
            dataset: DatasetSpec::Spiral(SpiralConfig {
                seed,
                ..Default::default()
            }),
            network: NetworkConfig {
                hidden: vec![100, 100, 500, 200, 100, 1000],
                batchnorm: true,
            },
            optimizer: OptimizerConfig::new(0.1, 0.9, 5e-4),
            epochs: 150,
            batch_size: None,
            curvature: CurvatureConfig {
                probe_seed: seed,
                ..Default::default()
            },
            stride: 1,
            corruption_fraction: None,
            normalize: false,
            heldout_curvature: true,
            keep_epoch_scores: false,
            seed,
            out_dir: None,
        }
    }

    /// Dense 784-512-512-10 substitute for the image classifier, batch 128,
    /// lr 0.1 decayed tenfold at 50% and 75% of training, weight decay 1e-4.
    pub fn mnist_corruption(dataset: DatasetSpec, fraction: f64, epochs: usize, seed: u64) -> Self {
        let mut optimizer = OptimizerConfig::new(0.1, 0.9, 1e-4);
        optimizer.lr_schedule = vec![(epochs / 2, 0.1), (epochs * 3 / 4, 0.01)];
        optimizer.lr_schedule.dedup_by_key(|(e, _)| *e);
        Self {
            dataset,
            network: NetworkConfig {
                hidden: vec![512, 512],
                batchnorm: false,
            },
            optimizer,
            epochs,
            batch_size: Some(128),
            curvature: CurvatureConfig {
                probe_seed: seed,
                ..Default::default()
            },
            stride: 1,
            corruption_fraction: Some(fraction),
            normalize: true,
            heldout_curvature: false,
            keep_epoch_scores: false,
            seed,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch size must be at least 1"));
        }
        if let Some(f) = self.corruption_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config(format!("corruption fraction {f} must lie in (0, 1)")));
            }
        }
        self.optimizer.validate()?;
        self.curvature.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = None;
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }

    fn is_scored(&self, epoch: usize) -> bool {
        (epoch - 1).is_multiple_of(self.stride)
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").expect("string write");
        s
    })
}

/// Training and held-out data as loaded for a run.
#[derive(Debug, Clone)]
pub struct LoadedData<T> {
    pub train: Dataset<T>,
    pub heldout: Option<Dataset<T>>,
}

pub fn load_dataset<T: Scalar>(spec: &DatasetSpec) -> Result<LoadedData<T>> {
    match spec {
        DatasetSpec::Mnist {
            images,
            labels,
            subset,
            heldout_images,
            heldout_labels,
        } => {
            let mut train = load_mnist_idx(images, labels)?;
            if let Some(n) = subset {
                train = train.balanced_subset(*n);
            }
            let heldout = match (heldout_images, heldout_labels) {
                (Some(i), Some(l)) => Some(load_mnist_idx(i, l)?),
                (None, None) => None,
                _ => return Err(Error::config("held-out images and labels must be given together")),
            };
            Ok(LoadedData { train, heldout })
        }
        DatasetSpec::Spiral(cfg) => {
            let (train, test) = gen_spiral(cfg)?;
            Ok(LoadedData {
                train,
                heldout: Some(test),
            })
        }
        DatasetSpec::Blobs(cfg) => Ok(LoadedData {
            train: gen_blobs(cfg)?,
            heldout: None,
        }),
    }
}

/// One row per completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub heldout_loss: Option<f64>,
    pub heldout_accuracy: Option<f64>,
    pub curvature_train: Option<f64>,
    pub curvature_heldout: Option<f64>,
    pub curvature_flagged: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub rows: Vec<HistoryRow>,
}

impl RunHistory {
    pub const HEADER: &'static str = "epoch,lr,train_loss,train_accuracy,heldout_loss,heldout_accuracy,\
curvature_train,curvature_heldout,curvature_flagged";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                format_f64(r.lr),
                format_f64(r.train_loss),
                format_f64(r.train_accuracy),
                opt(r.heldout_loss),
                opt(r.heldout_accuracy),
                opt(r.curvature_train),
                opt(r.curvature_heldout),
                opt(r.curvature_flagged),
            )
            .expect("string write");
        }
        out
    }

    /// `(epoch, mean train curvature)` for the scored epochs.
    pub fn curvature_series(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.curvature_train.map(|c| (r.epoch, c)))
            .collect()
    }

    pub fn heldout_series(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.curvature_heldout.map(|c| (r.epoch, c)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome<T> {
    pub network: Network<T>,
    pub ledger: CurvatureLedger<T>,
    pub history: RunHistory,
    pub curvature: ScoreReport,
    pub inconfidence: ScoreReport,
    pub mask: Option<CorruptionMask>,
    /// Training set as trained on (labels possibly corrupted).
    pub train: Dataset<T>,
    pub normalizer: Option<Normalizer<T>>,
    pub config_digest: String,
}

impl<T: Scalar> TrainingOutcome<T> {
    pub fn final_row(&self) -> &HistoryRow {
        self.history.rows.last().expect("at least one epoch")
    }
}

struct Evaluation<T> {
    mean_loss: f64,
    accuracy: f64,
    inconfidence: Vec<T>,
}

fn evaluate<T: Scalar>(net: &Network<T>, inputs: ArrayView2<'_, T>, labels: &[usize]) -> Result<Evaluation<T>> {
    let mut total = 0.0;
    let mut correct = 0usize;
    let mut inconf = Vec::with_capacity(labels.len());
    for (start, chunk) in inputs.axis_chunks_iter(Axis(0), EVAL_CHUNK).enumerate() {
        let logits = net.forward_batch(chunk)?;
        for (k, row) in logits.outer_iter().enumerate() {
            let y = labels[start * EVAL_CHUNK + k];
            total += loss(row, y)?.to_f64_lossy();
            let pred = crate::metrics::rank_top(row.as_slice().expect("row-major logits"), 1)[0];
            correct += usize::from(pred == y);
            inconf.push(inconfidence_from_logits(row, y));
        }
    }
    let n = labels.len().max(1) as f64;
    Ok(Evaluation {
        mean_loss: total / n,
        accuracy: correct as f64 / n,
        inconfidence: inconf,
    })
}

fn model_inputs<T: Scalar>(raw: &Array2<T>, normalizer: Option<&Normalizer<T>>) -> Result<Array2<T>> {
    match normalizer {
        Some(n) => n.apply(raw.view()),
        None => Ok(raw.clone()),
    }
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|s| s.to_f64_lossy()).collect()
}

/// Trains per `cfg`, scoring curvature at the end of every scored epoch with
/// the weights frozen in evaluation mode. Deterministic given `cfg`.
pub fn run_training<T: Scalar>(cfg: &ExperimentConfig) -> Result<TrainingOutcome<T>> {
    run_training_with(cfg, &mut |_| {})
}

/// [`run_training`], calling `progress` after every completed epoch.
pub fn run_training_with<T: Scalar>(
    cfg: &ExperimentConfig,
    progress: &mut dyn FnMut(&HistoryRow),
) -> Result<TrainingOutcome<T>> {
    cfg.validate()?;
    let data = load_dataset::<T>(&cfg.dataset)?;
    let (train, mask) = match cfg.corruption_fraction {
        Some(f) => {
            let (ds, mask) = corrupt_labels(&data.train, f, cfg.seed ^ 0xC0DE_C0DE)?;
            (ds, Some(mask))
        }
        None => (data.train, None),
    };
    if train.is_empty() {
        return Err(Error::Consistency("training set is empty".into()));
    }
    run_training_on(cfg, train, data.heldout, mask, progress)
}

/// [`run_training`] on an already prepared training set.
pub fn run_training_on<T: Scalar>(
    cfg: &ExperimentConfig,
    train: Dataset<T>,
    heldout: Option<Dataset<T>>,
    mask: Option<CorruptionMask>,
    progress: &mut dyn FnMut(&HistoryRow),
) -> Result<TrainingOutcome<T>> {
    cfg.validate()?;
    let normalizer = if cfg.normalize {
        let (mean, std) = train.channel_stats();
        Some(Normalizer::new(vec![mean], vec![std])?)
    } else {
        None
    };
    let spec = NetworkSpec {
        layer_widths: std::iter::once(train.dim()).chain(cfg.network.hidden.iter().copied()).collect(),
        num_classes: train.num_classes,
        batchnorm: vec![cfg.network.batchnorm; cfg.network.hidden.len()],
    };
    let mut net = init_network::<T>(&spec, cfg.seed)?;
    let mut velocity = Velocity::new(&net);

    let train_z = model_inputs(&train.inputs, normalizer.as_ref())?;
    let heldout_z = heldout
        .as_ref()
        .map(|h| model_inputs(&h.inputs, normalizer.as_ref()))
        .transpose()?;

    let mut ledger = CurvatureLedger::new(train.len());
    if let Some(m) = &mask {
        ledger = ledger.with_flagged(m.mask.clone())?;
    }
    if cfg.keep_epoch_scores {
        ledger = ledger.keeping_epochs();
    }

    let n = train.len();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = RunHistory::default();
    let mut last_eval = None;

    for epoch in 1..=cfg.epochs {
        let lr = cfg.optimizer.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        net.set_mode(Mode::Train);
        for idx in order.chunks(batch) {
            let xb = train_z.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let (losses, _) = net.train_step(xb.view(), &yb, &cfg.optimizer, T::of(lr), &mut velocity)?;
            if let Some(bad) = losses.iter().find(|l| !l.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    loss: bad.to_f64_lossy(),
                });
            }
        }

        net.set_mode(Mode::Eval);
        let eval = evaluate(&net, train_z.view(), &train.labels)?;
        if !eval.mean_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: eval.mean_loss,
            });
        }
        let held = match (&heldout, &heldout_z) {
            (Some(h), Some(z)) => Some(evaluate(&net, z.view(), &h.labels)?),
            _ => None,
        };
        let mut row = HistoryRow {
            epoch,
            lr,
            train_loss: eval.mean_loss,
            train_accuracy: eval.accuracy,
            heldout_loss: held.as_ref().map(|e| e.mean_loss),
            heldout_accuracy: held.as_ref().map(|e| e.accuracy),
            curvature_train: None,
            curvature_heldout: None,
            curvature_flagged: None,
        };
        if cfg.is_scored(epoch) {
            let scores = score_dataset(&net, train.inputs.view(), &train.labels, normalizer.as_ref(), &cfg.curvature, epoch)?;
            let summary = ledger.accumulate(epoch, &scores)?;
            if cfg.heldout_curvature {
                if let Some(h) = &heldout {
                    // Held-out probes come from a disjoint seed so they never
                    // coincide with a training sample's stream.
                    let mut hcfg = cfg.curvature.clone();
                    hcfg.probe_seed = !hcfg.probe_seed;
                    let hs = score_dataset(&net, h.inputs.view(), &h.labels, normalizer.as_ref(), &hcfg, epoch)?;
                    summary.heldout_mean = mean_score(&hs);
                }
            }
            row.curvature_train = Some(summary.train_mean);
            row.curvature_heldout = summary.heldout_mean;
            row.curvature_flagged = summary.flagged_mean;
        }
        progress(&row);
        history.rows.push(row);
        last_eval = Some(eval);
    }

    let digest = cfg.digest();
    let finalized = ledger.finalize()?;
    let mut curvature = ScoreReport::new(train.labels.clone(), to_f64(&finalized), ScoreKind::Curvature)?;
    curvature.epochs_averaged = ledger.epochs_accumulated();
    curvature.config_digest = digest.clone();
    let eval = last_eval.expect("epochs >= 1");
    let mut inconfidence = ScoreReport::new(train.labels.clone(), to_f64(&eval.inconfidence), ScoreKind::Inconfidence)?;
    inconfidence.config_digest = digest.clone();
    if let Some(m) = &mask {
        curvature = curvature.with_corrupted(m.mask.clone())?;
        inconfidence = inconfidence.with_corrupted(m.mask.clone())?;
    }

    Ok(TrainingOutcome {
        network: net,
        ledger,
        history,
        curvature,
        inconfidence,
        mask,
        train,
        normalizer,
        config_digest: digest,
    })
}

/// Rows `[start, end)` of a matrix as an owned array.
pub fn rows<T: Scalar>(m: &Array2<T>, start: usize, end: usize) -> Array2<T> {
    m.slice(s![start..end, ..]).to_owned()
}

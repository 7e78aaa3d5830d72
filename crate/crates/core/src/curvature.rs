//! Input-space curvature scores.
//!
//! For a sample `x` with label `y`, the per-epoch score is
//!
//! ```text
//! (1/n) Σ_i ‖ g(x + h v_i) − g(x) ‖²,   g = ∂L/∂x,  v_i ∈ {±1}^D
//! ```
//!
//! which is `h²` times a Hutchinson estimate of `Tr(H²)` for the input Hessian
//! `H` of the loss. Constant factors are not divided out: scores are only
//! ever compared with each other. The memorization score of a sample is the
//! mean of its per-epoch scores over training, kept by [`CurvatureLedger`].

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Normalizer;
use crate::error::{Error, Result};
use crate::nn::{Mode, Network};
use crate::scalar::Scalar;

/// Samples per batched gradient evaluation in [`epoch_pass`].
const SAMPLES_PER_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbSpace {
    /// Perturb pixels in `[0, 1]` before mean/std normalization.
    #[default]
    RawPixel,
    /// Perturb the normalized network input.
    ModelInput,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSchedule {
    /// New probes for every sample in every epoch.
    #[default]
    PerEpoch,
    /// Each sample reuses the same probes in every epoch.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurvatureConfig {
    /// Rademacher probes per sample and epoch.
    pub probes: usize,
    /// Finite-difference step.
    pub step: f64,
    pub perturb_space: PerturbSpace,
    pub probe_seed: u64,
    pub probe_schedule: ProbeSchedule,
}

impl Default for CurvatureConfig {
    fn default() -> Self {
        Self {
            probes: 10,
            step: 1e-3,
            perturb_space: PerturbSpace::RawPixel,
            probe_seed: 0,
            probe_schedule: ProbeSchedule::PerEpoch,
        }
    }
}

impl CurvatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probes == 0 {
            return Err(Error::config("probe count must be at least 1"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config("finite-difference step must be positive"));
        }
        Ok(())
    }
}

/// A vector with entries in `{+1, -1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DirectionVector(Vec<i8>);

impl DirectionVector {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::config("direction entries must be +1 or -1"));
        }
        Ok(Self(signs))
    }

    pub fn signs(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_array<T: Scalar>(&self) -> Array1<T> {
        self.0.iter().map(|&s| if s > 0 { T::one() } else { -T::one() }).collect()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|s| -s).collect())
    }
}

pub fn sample_rademacher<R: RngCore + ?Sized>(dim: usize, rng: &mut R) -> DirectionVector {
    DirectionVector((0..dim).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The probe stream of one sample in one epoch. Streams for distinct
/// `(seed, epoch, index)` triples do not overlap.
pub fn probe_stream(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed) ^ splitmix64(!(epoch as u64)));
    rng.set_stream(index as u64);
    rng
}

/// Anything that can report `∂L/∂x` row by row.
pub trait InputGradient<T: Scalar>: Sync {
    fn input_dim(&self) -> usize;

    /// Row `i` of the result is `∂L(x_i, y_i)/∂x_i`.
    fn input_gradients(&self, inputs: ArrayView2<'_, T>, labels: &[usize]) -> Result<Array2<T>>;
}

impl<T: Scalar> InputGradient<T> for Network<T> {
    fn input_dim(&self) -> usize {
        Network::input_dim(self)
    }

    fn input_gradients(&self, inputs: ArrayView2<'_, T>, labels: &[usize]) -> Result<Array2<T>> {
        if self.mode() != Mode::Eval {
            return Err(Error::NotFrozen("curvature scoring"));
        }
        Network::input_gradients(self, inputs, labels)
    }
}

/// Gradient of `model` with respect to un-normalized inputs.
pub struct Normalized<'a, T, M> {
    pub model: &'a M,
    pub normalizer: &'a Normalizer<T>,
}

impl<T: Scalar, M: InputGradient<T>> InputGradient<T> for Normalized<'_, T, M> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn input_gradients(&self, inputs: ArrayView2<'_, T>, labels: &[usize]) -> Result<Array2<T>> {
        let z = self.normalizer.apply(inputs)?;
        let mut g = self.model.input_gradients(z.view(), labels)?;
        self.normalizer.scale_gradient(&mut g);
        Ok(g)
    }
}

/// `L(x) = ½ xᵀ A x`, whose input Hessian is `A` (assumed symmetric).
#[derive(Debug, Clone)]
pub struct QuadraticLoss<T> {
    pub matrix: Array2<T>,
}

impl<T: Scalar> InputGradient<T> for QuadraticLoss<T> {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn input_gradients(&self, inputs: ArrayView2<'_, T>, _labels: &[usize]) -> Result<Array2<T>> {
        check_dim(self.input_dim(), inputs.ncols())?;
        Ok(inputs.dot(&self.matrix.t()))
    }
}

/// `L(x) = wᵀ x`; zero Hessian.
#[derive(Debug, Clone)]
pub struct LinearLoss<T> {
    pub weights: Array1<T>,
}

impl<T: Scalar> InputGradient<T> for LinearLoss<T> {
    fn input_dim(&self) -> usize {
        self.weights.len()
    }

    fn input_gradients(&self, inputs: ArrayView2<'_, T>, _labels: &[usize]) -> Result<Array2<T>> {
        check_dim(self.input_dim(), inputs.ncols())?;
        let mut out = Array2::zeros(inputs.raw_dim());
        out.rows_mut().into_iter().for_each(|mut r| r.assign(&self.weights));
        Ok(out)
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::InputShape { expected, actual });
    }
    Ok(())
}

/// `g(x + h v) − g(x)`.
pub fn hvp_fd<T: Scalar, M: InputGradient<T> + ?Sized>(
    model: &M,
    x: ArrayView1<'_, T>,
    label: usize,
    direction: &DirectionVector,
    step: T,
) -> Result<Array1<T>> {
    check_dim(model.input_dim(), x.len())?;
    check_dim(x.len(), direction.len())?;
    let mut batch = Array2::zeros((2, x.len()));
    batch.row_mut(0).assign(&x);
    let shifted = &x + &(direction.to_array::<T>() * step);
    batch.row_mut(1).assign(&shifted);
    let g = model.input_gradients(batch.view(), &[label, label])?;
    Ok(&g.row(1) - &g.row(0))
}

/// Fills `batch` rows `[offset, offset + n]` with `x` followed by `x + h v_i`.
fn fill_probes<T: Scalar, R: RngCore>(
    batch: &mut Array2<T>,
    offset: usize,
    x: ArrayView1<'_, T>,
    probes: usize,
    step: T,
    rng: &mut R,
) {
    batch.row_mut(offset).assign(&x);
    for i in 1..=probes {
        let v = sample_rademacher(x.len(), rng);
        let mut row = batch.row_mut(offset + i);
        for ((dst, &src), &s) in row.iter_mut().zip(x.iter()).zip(v.signs()) {
            *dst = if s > 0 { src + step } else { src - step };
        }
    }
}

/// Mean squared norm of `g_i − g_0` over rows `1..=n` of a gradient block.
fn block_score<T: Scalar>(grads: ArrayView2<'_, T>) -> T {
    let base = grads.row(0);
    let n = grads.nrows() - 1;
    let total: T = grads
        .slice(s![1.., ..])
        .outer_iter()
        .map(|g| {
            g.iter()
                .zip(base.iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>()
        })
        .sum();
    total / T::of_usize(n)
}

/// Per-epoch curvature of one sample with `cfg.probes` probes drawn from `rng`.
/// Uses `n + 1` gradient evaluations: `g(x)` once, then one per probe.
pub fn curvature_single<T: Scalar, M: InputGradient<T> + ?Sized, R: RngCore>(
    model: &M,
    x: ArrayView1<'_, T>,
    label: usize,
    cfg: &CurvatureConfig,
    rng: &mut R,
) -> Result<T> {
    cfg.validate()?;
    check_dim(model.input_dim(), x.len())?;
    let n = cfg.probes;
    let mut batch = Array2::zeros((n + 1, x.len()));
    fill_probes(&mut batch, 0, x, n, T::of(cfg.step), rng);
    let grads = model.input_gradients(batch.view(), &vec![label; n + 1])?;
    Ok(block_score(grads.view()))
}

/// Per-epoch curvature of every row of `inputs`, in row order.
///
/// Sample `i` draws its probes from [`probe_stream`]`(cfg.probe_seed, epoch, i)`,
/// so the result does not depend on how work is scheduled across threads.
/// Under [`ProbeSchedule::Fixed`] the epoch is ignored.
pub fn epoch_pass<T: Scalar, M: InputGradient<T> + ?Sized>(
    model: &M,
    inputs: ArrayView2<'_, T>,
    labels: &[usize],
    cfg: &CurvatureConfig,
    epoch: usize,
) -> Result<Vec<T>> {
    cfg.validate()?;
    check_dim(inputs.nrows(), labels.len())?;
    if inputs.nrows() == 0 {
        return Ok(Vec::new());
    }
    check_dim(model.input_dim(), inputs.ncols())?;
    let n = cfg.probes;
    let step = T::of(cfg.step);
    let probe_epoch = match cfg.probe_schedule {
        ProbeSchedule::PerEpoch => epoch,
        ProbeSchedule::Fixed => 0,
    };
    let chunks: Vec<Vec<T>> = (0..inputs.nrows())
        .collect::<Vec<_>>()
        .par_chunks(SAMPLES_PER_CHUNK)
        .map(|idx| -> Result<Vec<T>> {
            let rows = idx.len() * (n + 1);
            let mut batch = Array2::zeros((rows, inputs.ncols()));
            let mut batch_labels = Vec::with_capacity(rows);
            for (k, &i) in idx.iter().enumerate() {
                let mut rng = probe_stream(cfg.probe_seed, probe_epoch, i);
                fill_probes(&mut batch, k * (n + 1), inputs.row(i), n, step, &mut rng);
                batch_labels.extend(std::iter::repeat_n(labels[i], n + 1));
            }
            let grads = model.input_gradients(batch.view(), &batch_labels)?;
            Ok(grads
                .axis_chunks_iter(Axis(0), n + 1)
                .map(block_score)
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// [`epoch_pass`] for a network fed normalized inputs, perturbing in the space
/// selected by `cfg.perturb_space`. `raw` holds un-normalized samples.
pub fn score_dataset<T: Scalar>(
    net: &Network<T>,
    raw: ArrayView2<'_, T>,
    labels: &[usize],
    normalizer: Option<&Normalizer<T>>,
    cfg: &CurvatureConfig,
    epoch: usize,
) -> Result<Vec<T>> {
    match (normalizer, cfg.perturb_space) {
        (None, _) => epoch_pass(net, raw, labels, cfg, epoch),
        (Some(norm), PerturbSpace::RawPixel) => {
            let model = Normalized {
                model: net,
                normalizer: norm,
            };
            epoch_pass(&model, raw, labels, cfg, epoch)
        }
        (Some(norm), PerturbSpace::ModelInput) => {
            let z = norm.apply(raw)?;
            epoch_pass(net, z.view(), labels, cfg, epoch)
        }
    }
}

/// One row of per-epoch curvature means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochCurvature {
    pub epoch: usize,
    pub train_mean: f64,
    pub heldout_mean: Option<f64>,
    pub flagged_mean: Option<f64>,
}

/// Running per-sample sums of per-epoch curvature.
#[derive(Debug, Clone)]
pub struct CurvatureLedger<T> {
    sums: Vec<T>,
    epochs: usize,
    flagged: Option<Vec<bool>>,
    history: Vec<EpochCurvature>,
    kept: Option<Vec<Vec<T>>>,
}

fn mean_f64<T: Scalar>(values: impl Iterator<Item = T>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v.to_f64_lossy(), c + 1));
    (count > 0).then(|| sum / count as f64)
}

impl<T: Scalar> CurvatureLedger<T> {
    pub fn new(num_samples: usize) -> Self {
        Self {
            sums: vec![T::zero(); num_samples],
            epochs: 0,
            flagged: None,
            history: Vec::new(),
            kept: None,
        }
    }

    /// Also track the mean curvature of the samples where `mask` is true.
    pub fn with_flagged(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.sums.len() {
            return Err(Error::Ledger(format!(
                "flag mask has {} entries for {} samples",
                mask.len(),
                self.sums.len()
            )));
        }
        self.flagged = Some(mask);
        Ok(self)
    }

    /// Retain every accumulated per-epoch vector.
    pub fn keeping_epochs(mut self) -> Self {
        self.kept = Some(Vec::new());
        self
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    pub fn epochs_accumulated(&self) -> usize {
        self.epochs
    }

    pub fn history(&self) -> &[EpochCurvature] {
        &self.history
    }

    pub fn epoch_vectors(&self) -> Option<&[Vec<T>]> {
        self.kept.as_deref()
    }

    pub fn accumulate(&mut self, epoch: usize, scores: &[T]) -> Result<&mut EpochCurvature> {
        if scores.len() != self.sums.len() {
            return Err(Error::Ledger(format!(
                "score vector has {} entries, ledger has {}",
                scores.len(),
                self.sums.len()
            )));
        }
        if let Some(bad) = scores.iter().position(|s| !(s.is_finite() && *s >= T::zero())) {
            return Err(Error::Ledger(format!(
                "score {} at sample {bad} is not a finite nonnegative value",
                scores[bad]
            )));
        }
        for (s, &v) in self.sums.iter_mut().zip(scores) {
            *s += v;
        }
        self.epochs += 1;
        if let Some(kept) = self.kept.as_mut() {
            kept.push(scores.to_vec());
        }
        let flagged_mean = self.flagged.as_ref().and_then(|mask| {
            mean_f64(scores.iter().zip(mask).filter(|(_, &f)| f).map(|(&s, _)| s))
        });
        self.history.push(EpochCurvature {
            epoch,
            train_mean: mean_f64(scores.iter().copied()).unwrap_or(0.0),
            heldout_mean: None,
            flagged_mean,
        });
        Ok(self.history.last_mut().expect("just pushed"))
    }

    /// `sums / T`.
    pub fn finalize(&self) -> Result<Vec<T>> {
        if self.epochs == 0 {
            return Err(Error::Ledger("no epochs accumulated".into()));
        }
        let t = T::of_usize(self.epochs);
        Ok(self.sums.iter().map(|&s| s / t).collect())
    }
}

/// Mean of a score vector as `f64`, `None` when empty.
pub fn mean_score<T: Scalar>(scores: &[T]) -> Option<f64> {
    mean_f64(scores.iter().copied())
}

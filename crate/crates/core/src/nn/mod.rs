//! Dense rectified-linear classifier with optional batch normalization.
//!
//! A network built from `NetworkSpec { layer_widths: [d, h1, .., hk], .. }` is
//!
//! ```text
//! x -> [Dense(d, h1) -> BN? -> ReLU] -> .. -> [Dense(h{k-1}, hk) -> BN? -> ReLU] -> Dense(hk, C)
//! ```
//!
//! All batch computations take one sample per row. Backpropagation returns
//! parameter gradients of the batch-mean loss and input gradients of the
//! batch-summed loss, so that without batch-norm coupling row `i` of the input
//! gradient is exactly `dL_i/dx_i`.

mod loss;
mod optim;

pub use loss::{log_sum_exp, loss, softmax};
pub use optim::{sgd_step, LrSchedule, OptimizerConfig, Velocity};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Batch-norm running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;
/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input dimension followed by the hidden widths.
    pub layer_widths: Vec<usize>,
    pub num_classes: usize,
    /// One flag per hidden layer (`layer_widths.len() - 1` entries).
    #[serde(default)]
    pub batchnorm: Vec<bool>,
}

impl NetworkSpec {
    pub fn new(layer_widths: Vec<usize>, num_classes: usize) -> Self {
        let hidden = layer_widths.len().saturating_sub(1);
        Self {
            layer_widths,
            num_classes,
            batchnorm: vec![false; hidden],
        }
    }

    pub fn with_batchnorm(mut self, enabled: bool) -> Self {
        self.batchnorm = vec![enabled; self.layer_widths.len().saturating_sub(1)];
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn num_hidden(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(Error::config("layer_widths must not be empty"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.batchnorm.len() != self.num_hidden() {
            return Err(Error::config(format!(
                "batchnorm has {} flags for {} hidden layers",
                self.batchnorm.len(),
                self.num_hidden()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics.
    Train,
    /// Batch norm uses running statistics; the network is a fixed function.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// Shape `(out, in)`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNorm<T> {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: T::of(BN_MOMENTUM),
            eps: T::of(BN_EPS),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hidden<T> {
    pub dense: Dense<T>,
    pub bn: Option<BatchNorm<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    pub hidden: Vec<Hidden<T>>,
    pub head: Dense<T>,
    mode: Mode,
}

/// Gradient of one affine layer (plus its batch-norm scale and shift).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub gamma: Option<Array1<T>>,
    pub beta: Option<Array1<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub hidden: Vec<LayerGradients<T>>,
    pub head: LayerGradients<T>,
    /// `dL/dx`, when computed for a single sample.
    pub input: Option<Array1<T>>,
}

/// Result of a batch backward pass.
#[derive(Debug, Clone)]
pub struct BatchBackward<T> {
    /// Gradients of the batch-mean loss.
    pub params: Gradients<T>,
    /// Row `i` is the gradient of the summed batch loss with respect to sample `i`.
    pub inputs: Array2<T>,
    pub losses: Array1<T>,
    pub logits: Array2<T>,
}

struct LayerCache<T> {
    input: Array2<T>,
    /// Normalized pre-activation (batch norm) or `None`.
    xhat: Option<Array2<T>>,
    inv_std: Option<Array1<T>>,
    /// Post-affine (and post-BN) values before the ReLU.
    pre_relu: Array2<T>,
    batch_stats: Option<(Array1<T>, Array1<T>)>,
}

struct ForwardTrace<T> {
    layers: Vec<LayerCache<T>>,
    head_input: Array2<T>,
    logits: Array2<T>,
}

impl<T: Scalar> LayerGradients<T> {
    fn zeros_like(dense: &Dense<T>, bn: Option<&BatchNorm<T>>) -> Self {
        Self {
            weight: Array2::zeros(dense.weight.raw_dim()),
            bias: Array1::zeros(dense.bias.raw_dim()),
            gamma: bn.map(|b| Array1::zeros(b.gamma.raw_dim())),
            beta: bn.map(|b| Array1::zeros(b.beta.raw_dim())),
        }
    }

    fn slices(&self) -> Vec<&[T]> {
        let mut out = vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ];
        if let (Some(g), Some(b)) = (&self.gamma, &self.beta) {
            out.push(g.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ];
        if let (Some(g), Some(b)) = (&mut self.gamma, &mut self.beta) {
            out.push(g.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

impl<T: Scalar> Gradients<T> {
    /// Zero gradients shaped like `net`.
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            hidden: net
                .hidden
                .iter()
                .map(|h| LayerGradients::zeros_like(&h.dense, h.bn.as_ref()))
                .collect(),
            head: LayerGradients::zeros_like(&net.head, None),
            input: None,
        }
    }

    /// Parameter buffers in the same order as [`Network::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.hidden.iter().flat_map(|l| l.slices()).collect();
        out.extend(self.head.slices());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self
            .hidden
            .iter_mut()
            .flat_map(|l| l.slices_mut())
            .collect();
        out.extend(self.head.slices_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

/// Builds a network with fan-in scaled uniform weights, zero biases and identity batch norm.
pub fn init_network<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<Network<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dense = |fan_in: usize, fan_out: usize| {
        let bound = T::of((6.0 / fan_in as f64).sqrt());
        let dist = Uniform::new_inclusive(-bound, bound);
        Dense {
            weight: Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(&mut rng)),
            bias: Array1::zeros(fan_out),
        }
    };
    let hidden = spec
        .layer_widths
        .windows(2)
        .zip(&spec.batchnorm)
        .map(|(w, &bn)| Hidden {
            dense: dense(w[0], w[1]),
            bn: bn.then(|| BatchNorm::new(w[1])),
        })
        .collect();
    let head = dense(*spec.layer_widths.last().unwrap(), spec.num_classes);
    Ok(Network {
        spec: spec.clone(),
        hidden,
        head,
        mode: Mode::Train,
    })
}

fn standard<T: Scalar>(a: Array2<T>) -> Array2<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn affine<T: Scalar>(input: &ArrayView2<'_, T>, dense: &Dense<T>) -> Array2<T> {
    let mut z = input.dot(&dense.weight.t());
    z += &dense.bias;
    z
}

impl<T: Scalar> Network<T> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn has_batchnorm(&self) -> bool {
        self.hidden.iter().any(|h| h.bn.is_some())
    }

    /// Trainable parameter buffers: per hidden layer weight, bias, [gamma, beta]; then the head.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for h in &mut self.hidden {
            out.push(h.dense.weight.as_slice_mut().expect("standard layout"));
            out.push(h.dense.bias.as_slice_mut().expect("standard layout"));
            if let Some(bn) = &mut h.bn {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.head.weight.as_slice_mut().expect("standard layout"));
        out.push(self.head.bias.as_slice_mut().expect("standard layout"));
        out
    }

    fn check_batch(&self, inputs: &ArrayView2<'_, T>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                actual: inputs.ncols(),
            });
        }
        Ok(())
    }

    fn check_labels(&self, labels: &[usize], rows: usize) -> Result<()> {
        if labels.len() != rows {
            return Err(Error::InputShape {
                expected: rows,
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes()) {
            return Err(Error::Label {
                label: bad,
                num_classes: self.num_classes(),
            });
        }
        Ok(())
    }

    /// Logits for one sample.
    pub fn forward(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
        let batch = x.insert_axis(Axis(0));
        Ok(self.forward_batch(batch)?.row(0).to_owned())
    }

    /// Logits for each row of `inputs`.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_batch(&inputs)?;
        Ok(self.trace(inputs, false).logits)
    }

    fn trace(&self, inputs: ArrayView2<'_, T>, keep: bool) -> ForwardTrace<T> {
        let mut layers = Vec::with_capacity(if keep { self.hidden.len() } else { 0 });
        let mut act = inputs.to_owned();
        for layer in &self.hidden {
            let mut z = affine(&act.view(), &layer.dense);
            let mut xhat = None;
            let mut inv_std_out = None;
            let mut batch_stats = None;
            if let Some(bn) = &layer.bn {
                let (mean, var) = match self.mode {
                    Mode::Train => {
                        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                        let var = z.var_axis(Axis(0), T::zero());
                        (mean, var)
                    }
                    Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                };
                let inv_std = var.mapv(|v| T::one() / (v + bn.eps).sqrt());
                z -= &mean;
                z *= &inv_std;
                if keep {
                    xhat = Some(z.clone());
                    inv_std_out = Some(inv_std);
                    if self.mode == Mode::Train {
                        batch_stats = Some((mean, var));
                    }
                }
                z *= &bn.gamma;
                z += &bn.beta;
            }
            let next = z.mapv(|v| v.max(T::zero()));
            if keep {
                layers.push(LayerCache {
                    input: act,
                    xhat,
                    inv_std: inv_std_out,
                    pre_relu: z,
                    batch_stats,
                });
            }
            act = next;
        }
        let logits = affine(&act.view(), &self.head);
        ForwardTrace {
            layers,
            head_input: act,
            logits,
        }
    }

    /// Softmax minus one-hot for each row, i.e. `dL_i/dlogits_i`.
    fn logit_grads(logits: &Array2<T>, labels: &[usize]) -> (Array2<T>, Array1<T>) {
        let mut grads = Array2::zeros(logits.raw_dim());
        let mut losses = Array1::zeros(logits.nrows());
        for (i, (row, &y)) in logits.outer_iter().zip(labels).enumerate() {
            let p = softmax(row);
            losses[i] = (log_sum_exp(row) - row[y]).max(T::zero());
            grads.row_mut(i).assign(&p);
            grads[[i, y]] -= T::one();
        }
        (grads, losses)
    }

    /// Full backward pass over a batch.
    pub fn backward_batch(&self, inputs: ArrayView2<'_, T>, labels: &[usize]) -> Result<BatchBackward<T>> {
        self.check_batch(&inputs)?;
        self.check_labels(labels, inputs.nrows())?;
        let (backward, _) = self.backward_impl(inputs, labels, true);
        Ok(backward)
    }

    /// Gradients of a single sample's loss, including `dL/dx`.
    pub fn backward(&self, x: ArrayView1<'_, T>, label: usize) -> Result<Gradients<T>> {
        let batch = x.insert_axis(Axis(0));
        let mut out = self.backward_batch(batch, &[label])?;
        out.params.input = Some(out.inputs.row(0).to_owned());
        Ok(out.params)
    }

    /// `dL_i/dx_i` for each row, without parameter gradients. Requires evaluation
    /// mode when batch norm is present so that rows do not interact.
    pub fn input_gradients(&self, inputs: ArrayView2<'_, T>, labels: &[usize]) -> Result<Array2<T>> {
        self.check_batch(&inputs)?;
        self.check_labels(labels, inputs.nrows())?;
        if self.mode == Mode::Train && self.has_batchnorm() {
            return Err(Error::NotFrozen("per-sample input gradients"));
        }
        let (backward, _) = self.backward_impl(inputs, labels, false);
        Ok(backward.inputs)
    }

    /// Returns the backward result and, in training mode, per-layer batch statistics.
    #[allow(clippy::type_complexity)]
    fn backward_impl(
        &self,
        inputs: ArrayView2<'_, T>,
        labels: &[usize],
        with_params: bool,
    ) -> (BatchBackward<T>, Vec<Option<(Array1<T>, Array1<T>)>>) {
        let batch = inputs.nrows();
        let scale = T::one() / T::of_usize(batch);
        let trace = self.trace(inputs, true);
        let (dlogits, losses) = Self::logit_grads(&trace.logits, labels);

        let mut grads = if with_params {
            Some(Gradients::zeros_like(self))
        } else {
            None
        };

        if let Some(g) = grads.as_mut() {
            g.head.weight = standard(dlogits.t().dot(&trace.head_input) * scale);
            g.head.bias = dlogits.sum_axis(Axis(0)) * scale;
        }
        let mut dact = dlogits.dot(&self.head.weight);

        let mut stats = vec![None; self.hidden.len()];
        for (idx, (layer, cache)) in self.hidden.iter().zip(trace.layers).enumerate().rev() {
            // ReLU
            Zip::from(&mut dact)
                .and(&cache.pre_relu)
                .for_each(|d, &u| {
                    if u <= T::zero() {
                        *d = T::zero();
                    }
                });
            let mut dz = dact;
            if let Some(bn) = &layer.bn {
                let xhat = cache.xhat.as_ref().expect("cached");
                let inv_std = cache.inv_std.as_ref().expect("cached");
                if let Some(g) = grads.as_mut() {
                    g.hidden[idx].gamma = Some((&dz * xhat).sum_axis(Axis(0)) * scale);
                    g.hidden[idx].beta = Some(dz.sum_axis(Axis(0)) * scale);
                }
                let mut dxhat = dz;
                dxhat *= &bn.gamma;
                dz = match self.mode {
                    Mode::Eval => dxhat * inv_std,
                    Mode::Train => {
                        let n = T::of_usize(batch);
                        let sum_d = dxhat.sum_axis(Axis(0));
                        let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                        let mut out = dxhat * n;
                        out -= &sum_d;
                        out -= &(xhat * &sum_dx);
                        out *= inv_std;
                        out / n
                    }
                };
                stats[idx] = cache.batch_stats;
            }
            if let Some(g) = grads.as_mut() {
                g.hidden[idx].weight = standard(dz.t().dot(&cache.input) * scale);
                g.hidden[idx].bias = dz.sum_axis(Axis(0)) * scale;
            }
            dact = dz.dot(&layer.dense.weight);
        }

        let params = grads.unwrap_or_else(|| Gradients {
            hidden: Vec::new(),
            head: LayerGradients {
                weight: Array2::zeros((0, 0)),
                bias: Array1::zeros(0),
                gamma: None,
                beta: None,
            },
            input: None,
        });
        (
            BatchBackward {
                params,
                inputs: dact,
                losses,
                logits: trace.logits,
            },
            stats,
        )
    }

    /// One minibatch SGD step in training mode. Returns the batch losses and logits.
    pub fn train_step(
        &mut self,
        inputs: ArrayView2<'_, T>,
        labels: &[usize],
        cfg: &OptimizerConfig,
        lr: T,
        velocity: &mut Velocity<T>,
    ) -> Result<(Array1<T>, Array2<T>)> {
        self.check_batch(&inputs)?;
        self.check_labels(labels, inputs.nrows())?;
        let previous = self.mode;
        self.mode = Mode::Train;
        let (backward, stats) = self.backward_impl(inputs, labels, true);
        let batch = inputs.nrows();
        for (layer, stat) in self.hidden.iter_mut().zip(stats) {
            if let (Some(bn), Some((mean, var))) = (layer.bn.as_mut(), stat) {
                let m = bn.momentum;
                let unbias = if batch > 1 {
                    T::of_usize(batch) / T::of_usize(batch - 1)
                } else {
                    T::one()
                };
                Zip::from(&mut bn.running_mean)
                    .and(&mean)
                    .for_each(|r, &b| *r = (T::one() - m) * *r + m * b);
                let eps = bn.eps;
                Zip::from(&mut bn.running_var)
                    .and(&var)
                    .for_each(|r, &b| *r = ((T::one() - m) * *r + m * b * unbias).max(eps));
            }
        }
        sgd_step(self, &backward.params, cfg, lr, velocity)?;
        self.mode = previous;
        Ok((backward.losses, backward.logits))
    }
}

//! SGD with momentum and L2 weight decay folded into the gradient.

use serde::{Deserialize, Serialize};

use super::{Gradients, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Piecewise-constant learning-rate multipliers: `(epoch, multiplier)` means the
/// multiplier applies once `epoch` epochs have completed.
pub type LrSchedule = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

impl OptimizerConfig {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            weight_decay,
            lr_schedule: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be finite and nonnegative"));
        }
        if self.lr_schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::config("lr_schedule epochs must be strictly increasing"));
        }
        Ok(())
    }

    /// Learning rate for the 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mult = self
            .lr_schedule
            .iter()
            .take_while(|(e, _)| *e < epoch)
            .last()
            .map_or(1.0, |(_, m)| *m);
        self.learning_rate * mult
    }
}

/// Momentum buffers, shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity<T>(Gradients<T>);

impl<T: Scalar> Velocity<T> {
    pub fn new(net: &Network<T>) -> Self {
        Self(Gradients::zeros_like(net))
    }

    pub fn buffers(&self) -> Vec<&[T]> {
        self.0.slices()
    }
}

/// `v <- momentum * v + grad + wd * param; param <- param - lr * v`.
///
/// Batch-norm running statistics are not parameters and are left untouched.
pub fn sgd_step<T: Scalar>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    cfg: &OptimizerConfig,
    lr: T,
    velocity: &mut Velocity<T>,
) -> Result<()> {
    let momentum = T::of(cfg.momentum);
    let wd = T::of(cfg.weight_decay);
    let grad_bufs = grads.slices();
    let mut vel_bufs = velocity.0.slices_mut();
    let mut params = net.param_slices_mut();
    if grad_bufs.len() != params.len() || vel_bufs.len() != params.len() {
        return Err(Error::InputShape {
            expected: params.len(),
            actual: grad_bufs.len(),
        });
    }
    for ((p, g), v) in params.iter_mut().zip(&grad_bufs).zip(vel_bufs.iter_mut()) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::InputShape {
                expected: p.len(),
                actual: g.len(),
            });
        }
        for ((p, &g), v) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *v = momentum * *v + g + wd * *p;
            *p -= lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_network, NetworkSpec};

    fn scalar_net(value: f64) -> Network<f64> {
        let mut net = init_network::<f64>(&NetworkSpec::new(vec![1], 2), 0).unwrap();
        net.head.weight.fill(value);
        net.head.bias.fill(value);
        net
    }

    fn filled_grads(net: &Network<f64>, g: f64) -> Gradients<f64> {
        let mut grads = Gradients::zeros_like(net);
        for s in grads.slices_mut() {
            s.fill(g);
        }
        grads
    }

    #[test]
    fn plain_gradient_step() {
        let mut net = scalar_net(1.0);
        let grads = filled_grads(&net, 0.5);
        let mut v = Velocity::new(&net);
        sgd_step(&mut net, &grads, &OptimizerConfig::new(1.0, 0.0, 0.0), 1.0, &mut v).unwrap();
        assert!(net.head.weight.iter().all(|&w| w == 0.5));
    }

    #[test]
    fn momentum_unrolled_twice() {
        let mut net = scalar_net(0.0);
        let grads = filled_grads(&net, 1.0);
        let cfg = OptimizerConfig::new(0.1, 0.9, 0.0);
        let mut v = Velocity::new(&net);
        sgd_step(&mut net, &grads, &cfg, 0.1, &mut v).unwrap();
        let after_one = net.head.weight[[0, 0]];
        sgd_step(&mut net, &grads, &cfg, 0.1, &mut v).unwrap();
        let second = after_one - net.head.weight[[0, 0]];
        assert!((second - 0.1 * 1.9).abs() < 1e-15);
    }

    #[test]
    fn pure_decay() {
        let mut net = scalar_net(1.0);
        let grads = filled_grads(&net, 0.0);
        let mut v = Velocity::new(&net);
        sgd_step(&mut net, &grads, &OptimizerConfig::new(1.0, 0.0, 0.1), 1.0, &mut v).unwrap();
        assert!(net.head.weight.iter().all(|&w| (w - 0.9).abs() < 1e-15));
    }

    #[test]
    fn batchnorm_running_stats_not_decayed() {
        let spec = NetworkSpec::new(vec![2, 3], 2).with_batchnorm(true);
        let mut net = init_network::<f64>(&spec, 1).unwrap();
        let before = net.hidden[0].bn.clone().unwrap();
        let grads = Gradients::zeros_like(&net);
        let mut v = Velocity::new(&net);
        sgd_step(&mut net, &grads, &OptimizerConfig::new(1.0, 0.0, 0.5), 1.0, &mut v).unwrap();
        let after = net.hidden[0].bn.as_ref().unwrap();
        assert_eq!(after.running_var, before.running_var);
        assert_eq!(after.running_mean, before.running_mean);
        assert!(after.gamma.iter().all(|&g| g == 0.5));
    }

    #[test]
    fn shape_mismatch() {
        let mut net = scalar_net(1.0);
        let other = init_network::<f64>(&NetworkSpec::new(vec![1, 2], 2), 0).unwrap();
        let grads = Gradients::zeros_like(&other);
        let mut v = Velocity::new(&net);
        let cfg = OptimizerConfig::new(1.0, 0.0, 0.0);
        assert!(sgd_step(&mut net, &grads, &cfg, 1.0, &mut v).is_err());
    }

    #[test]
    fn schedule() {
        let mut cfg = OptimizerConfig::new(0.1, 0.9, 0.0);
        cfg.lr_schedule = vec![(80, 0.1), (160, 0.01)];
        assert_eq!(cfg.lr_at(1), 0.1);
        assert_eq!(cfg.lr_at(80), 0.1);
        assert!((cfg.lr_at(81) - 0.01).abs() < 1e-15);
        assert!((cfg.lr_at(200) - 0.001).abs() < 1e-15);
        cfg.lr_schedule = vec![(5, 0.1), (5, 0.01)];
        assert!(cfg.validate().is_err());
    }
}

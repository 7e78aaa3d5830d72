//! Gaussian blobs: a small, well separated synthetic classification set.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobsConfig {
    pub per_class: usize,
    pub num_classes: usize,
    pub dim: usize,
    /// Distance of each class center from the origin along its own axis.
    pub separation: f64,
    pub spread: f64,
    pub seed: u64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            per_class: 20,
            num_classes: 2,
            dim: 2,
            separation: 1.0,
            spread: 0.1,
            seed: 0,
        }
    }
}

/// Class `c` is centered at `separation * e_c`; samples are ordered by class.
pub fn gen_blobs<T: Scalar>(cfg: &BlobsConfig) -> Result<Dataset<T>> {
    if cfg.num_classes < 2 || cfg.dim < cfg.num_classes || cfg.per_class == 0 {
        return Err(Error::config("blobs need >= 2 classes, dim >= classes and per_class >= 1"));
    }
    let normal = Normal::new(0.0, cfg.spread).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.per_class * cfg.num_classes;
    let mut inputs = Array2::zeros((n, cfg.dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i / cfg.per_class;
        for j in 0..cfg.dim {
            let center = if j == class { cfg.separation } else { 0.0 };
            inputs[[i, j]] = T::of(center + normal.sample(&mut rng));
        }
        labels.push(class);
    }
    Dataset::new(inputs, labels, cfg.num_classes, Provenance::Synthetic)
}

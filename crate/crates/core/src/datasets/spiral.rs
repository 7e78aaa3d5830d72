//! Two interleaved spirals in the plane.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const THETA_MIN: f64 = PI / 4.0;
pub const THETA_MAX: f64 = 3.5 * PI;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpiralNoise {
    /// Gaussian noise on both coordinates of the chosen points.
    #[default]
    Coordinate,
    /// The chosen points swap to the other class.
    LabelFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpiralConfig {
    pub points_per_class_train: usize,
    pub points_per_class_test: usize,
    /// Fraction of training points that receive noise.
    pub noise_fraction: f64,
    /// Coordinate noise standard deviation, in units of the outer radius.
    pub noise_sigma: f64,
    pub noise: SpiralNoise,
    pub seed: u64,
}

impl Default for SpiralConfig {
    fn default() -> Self {
        Self {
            points_per_class_train: 15,
            points_per_class_test: 100,
            noise_fraction: 0.3,
            noise_sigma: 0.3,
            noise: SpiralNoise::Coordinate,
            seed: 0,
        }
    }
}

impl SpiralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_class_train == 0 || self.points_per_class_test == 0 {
            return Err(Error::config("spiral point counts must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return Err(Error::config("noise_fraction must lie in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Point of spiral `class` at angle `theta`.
pub fn spiral_point(theta: f64, class: usize) -> (f64, f64) {
    let r = theta / THETA_MAX;
    let phase = theta + class as f64 * PI;
    (r * phase.sin(), r * phase.cos())
}

fn sample_spirals<T: Scalar>(per_class: usize, rng: &mut ChaCha8Rng) -> (Array2<T>, Vec<usize>) {
    let n = 2 * per_class;
    let mut inputs = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for class in 0..2 {
        for k in 0..per_class {
            let theta = rng.gen_range(THETA_MIN..=THETA_MAX);
            let (x, y) = spiral_point(theta, class);
            let row = class * per_class + k;
            inputs[[row, 0]] = T::of(x);
            inputs[[row, 1]] = T::of(y);
            labels.push(class);
        }
    }
    (inputs, labels)
}

/// Returns `(train, test)`; the test set is noise-free.
pub fn gen_spiral<T: Scalar>(cfg: &SpiralConfig) -> Result<(Dataset<T>, Dataset<T>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut train_x, mut train_y) = sample_spirals::<T>(cfg.points_per_class_train, &mut rng);
    let (test_x, test_y) = sample_spirals::<T>(cfg.points_per_class_test, &mut rng);

    let n = train_y.len();
    let noisy = (cfg.noise_fraction * n as f64).floor() as usize;
    let mut chosen = sample(&mut rng, n, noisy).into_vec();
    chosen.sort_unstable();
    match cfg.noise {
        SpiralNoise::Coordinate => {
            let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
            for &i in &chosen {
                for j in 0..2 {
                    train_x[[i, j]] += T::of(normal.sample(&mut rng));
                }
            }
        }
        SpiralNoise::LabelFlip => {
            for &i in &chosen {
                train_y[i] = 1 - train_y[i];
            }
        }
    }
    Ok((
        Dataset::new(train_x, train_y, 2, Provenance::Spiral)?,
        Dataset::new(test_x, test_y, 2, Provenance::Spiral)?,
    ))
}

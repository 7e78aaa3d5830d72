//! Datasets, generators, label corruption and input normalization.

mod blobs;
mod corrupt;
mod idx;
mod spiral;

pub use blobs::{gen_blobs, BlobsConfig};
pub use corrupt::{corrupt_labels, CorruptionMask};
pub use idx::{load_mnist_idx, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use spiral::{gen_spiral, spiral_point, SpiralConfig, SpiralNoise};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Mnist,
    Spiral,
    Synthetic,
}

/// Labeled samples, one per row. Sample `i` is row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Array2<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub provenance: Provenance,
    /// `(rows, cols)` when each sample is a grayscale image.
    pub image_shape: Option<(usize, usize)>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        inputs: Array2<T>,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} inputs but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::config("a dataset needs at least 2 classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Label {
                label: bad,
                num_classes,
            });
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            provenance,
            image_shape: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            provenance: self.provenance,
            image_shape: self.image_shape,
        }
    }

    /// The first `total / C` samples of every class (fewer when a class is
    /// smaller), keeping file order.
    pub fn balanced_subset(&self, total: usize) -> Self {
        let quota = total / self.num_classes;
        let mut taken = vec![0; self.num_classes];
        let indices: Vec<usize> = self
            .labels
            .iter()
            .enumerate()
            .filter(|&(_, &y)| {
                let keep = taken[y] < quota;
                taken[y] += usize::from(keep);
                keep
            })
            .map(|(i, _)| i)
            .collect();
        self.select(&indices)
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        let mut out = Dataset::new(self.inputs.clone(), labels, self.num_classes, self.provenance)?;
        out.image_shape = self.image_shape;
        Ok(out)
    }

    /// Per-feature mean and standard deviation over the dataset.
    pub fn feature_stats(&self) -> (Vec<T>, Vec<T>) {
        let mean = self.inputs.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(self.dim()));
        let std = self.inputs.std_axis(Axis(0), T::zero());
        (mean.to_vec(), std.to_vec())
    }

    /// Mean and standard deviation over every pixel (single channel).
    pub fn channel_stats(&self) -> (T, T) {
        let n = T::of_usize(self.inputs.len().max(1));
        let mean = self.inputs.sum() / n;
        let var = self.inputs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        (mean, var.sqrt())
    }
}

/// `(x − mean) / std`, with `mean` and `std` either per feature or a single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer<T> {
    mean: Vec<T>,
    std: Vec<T>,
}

impl<T: Scalar> Normalizer<T> {
    pub fn new(mean: Vec<T>, std: Vec<T>) -> Result<Self> {
        if mean.is_empty() || mean.len() != std.len() {
            return Err(Error::config("mean and std must be non-empty and equally long"));
        }
        if std.iter().any(|s| s.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::config("normalization std must be positive"));
        }
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self {
            mean: vec![T::zero()],
            std: vec![T::one()],
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.mean.len() != 1 && self.mean.len() != dim {
            return Err(Error::InputShape {
                expected: self.mean.len(),
                actual: dim,
            });
        }
        Ok(())
    }

    #[inline]
    fn at(&self, j: usize) -> (T, T) {
        if self.mean.len() == 1 {
            (self.mean[0], self.std[0])
        } else {
            (self.mean[j], self.std[j])
        }
    }

    pub fn apply(&self, raw: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check(raw.ncols())?;
        Ok(Array2::from_shape_fn(raw.raw_dim(), |(i, j)| {
            let (m, s) = self.at(j);
            (raw[[i, j]] - m) / s
        }))
    }

    pub fn invert(&self, normalized: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check(normalized.ncols())?;
        Ok(Array2::from_shape_fn(normalized.raw_dim(), |(i, j)| {
            let (m, s) = self.at(j);
            normalized[[i, j]] * s + m
        }))
    }

    /// Converts `∂L/∂z` rows into `∂L/∂x` rows for `z = (x − mean)/std`.
    pub fn scale_gradient(&self, grads: &mut Array2<T>) {
        for mut row in grads.rows_mut() {
            for (j, g) in row.iter_mut().enumerate() {
                *g /= self.at(j).1;
            }
        }
    }
}

/// A dataset together with the normalization the network sees.
#[derive(Debug, Clone)]
pub struct NormalizedView<'a, T> {
    pub raw: &'a Dataset<T>,
    pub normalizer: Normalizer<T>,
}

/// Pairs `ds` with `(x − mean)/std`; the raw samples stay available for
/// raw-pixel perturbation.
pub fn normalize<T: Scalar>(ds: &Dataset<T>, mean: Vec<T>, std: Vec<T>) -> Result<NormalizedView<'_, T>> {
    let normalizer = Normalizer::new(mean, std)?;
    normalizer.check(ds.dim())?;
    Ok(NormalizedView { raw: ds, normalizer })
}

impl<T: Scalar> NormalizedView<'_, T> {
    pub fn model_inputs(&self) -> Array2<T> {
        self.normalizer
            .apply(self.raw.inputs.view())
            .expect("dimension checked at construction")
    }

    pub fn denormalize(&self, normalized: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.normalizer.invert(normalized)
    }
}

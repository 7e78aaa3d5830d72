//! Class-balanced synthetic label corruption.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionMask {
    pub mask: Vec<bool>,
    pub original_labels: Vec<usize>,
    pub assigned_labels: Vec<usize>,
    pub fraction: f64,
    pub seed: u64,
}

impl CorruptionMask {
    pub fn num_corrupted(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn corrupted_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// `index,original_label,assigned_label,corrupted`, one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,original_label,assigned_label,corrupted\n");
        for (i, ((&orig, &assigned), &m)) in self
            .original_labels
            .iter()
            .zip(&self.assigned_labels)
            .zip(&self.mask)
            .enumerate()
        {
            writeln!(out, "{i},{orig},{assigned},{}", u8::from(m)).expect("string write");
        }
        out
    }
}

/// In each class, `floor(fraction * class_count)` samples chosen by a seeded
/// draw get a label drawn uniformly from the other `C - 1` classes.
pub fn corrupt_labels<T: Scalar>(ds: &Dataset<T>, fraction: f64, seed: u64) -> Result<(Dataset<T>, CorruptionMask)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("corruption fraction {fraction} must lie in (0, 1)")));
    }
    let classes = ds.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = ds.labels.clone();
    let mut mask = vec![false; ds.len()];
    for class in 0..classes {
        let members: Vec<usize> = ds
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, &y)| (y == class).then_some(i))
            .collect();
        let count = (fraction * members.len() as f64).floor() as usize;
        let mut picked = sample(&mut rng, members.len(), count).into_vec();
        picked.sort_unstable();
        for k in picked {
            let i = members[k];
            let r = rng.gen_range(0..classes - 1);
            labels[i] = if r < class { r } else { r + 1 };
            mask[i] = true;
        }
    }
    let corrupted = ds.with_labels(labels.clone())?;
    Ok((
        corrupted,
        CorruptionMask {
            mask,
            original_labels: ds.labels.clone(),
            assigned_labels: labels,
            fraction,
            seed,
        },
    ))
}

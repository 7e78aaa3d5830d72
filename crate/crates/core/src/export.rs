//! Binary PGM dumps of the highest- or lowest-scoring images.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::metrics::ScoreReport;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankEnd {
    High,
    Low,
}

/// `P5` header followed by one byte per pixel, `round(255 * v)` clamped to `[0, 255]`.
pub fn encode_pgm<T: Scalar>(pixels: &[T], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|p| (p.to_f64_lossy() * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

/// Writes the `k` samples at `end` of the ranking as `<rank>_<index>_<label>.pgm`,
/// rank 0 being the highest (or lowest) score. Returns the paths in rank order.
pub fn export_topk_images<T: Scalar>(
    ds: &Dataset<T>,
    report: &ScoreReport,
    k: usize,
    end: RankEnd,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (rows, cols) = ds
        .image_shape
        .ok_or_else(|| Error::UnsupportedExport("dataset has no image geometry".into()))?;
    if let Some(&bad) = report.indices.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::Consistency(format!(
            "report index {bad} is outside a dataset of {} samples",
            ds.len()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let chosen = match end {
        RankEnd::High => report.rank_top(k),
        RankEnd::Low => report.rank_bottom(k),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(chosen.len());
    for (rank, &index) in chosen.iter().enumerate() {
        let row = ds.inputs.row(index);
        let pixels: Vec<T> = row.iter().copied().collect();
        let label = report.labels[report.indices.binary_search(&index).expect("index from report")];
        let path = dir.join(format!("{rank}_{index}_{label}.pgm"));
        fs::write(&path, encode_pgm(&pixels, rows, cols)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

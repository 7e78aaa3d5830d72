//! IDX container (big-endian `u32` magic and dimensions, then raw bytes).

use std::fs;
use std::io::{self, ErrorKind};
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path, bytes, pos: 0 })
    }

    fn truncated(&self, what: &str) -> Error {
        Error::io(
            self.path,
            io::Error::new(ErrorKind::UnexpectedEof, format!("file truncated while reading {what}")),
        )
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| self.truncated(what))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn body(&self, len: usize, what: &str) -> Result<&[u8]> {
        self.bytes
            .get(self.pos..self.pos + len)
            .ok_or_else(|| self.truncated(what))
    }

    fn expect_magic(&mut self, magic: u32) -> Result<()> {
        let found = self.u32("magic")?;
        if found != magic {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                detail: format!("magic {found:#010x}, expected {magic:#010x}"),
            });
        }
        Ok(())
    }
}

/// Loads an IDX image/label pair, scaling pixels to `[0, 1]` by `/255`.
pub fn load_mnist_idx<T: Scalar>(image_path: &Path, label_path: &Path) -> Result<Dataset<T>> {
    let mut images = Reader::open(image_path)?;
    images.expect_magic(IDX_IMAGES_MAGIC)?;
    let n = images.u32("image count")? as usize;
    let rows = images.u32("row count")? as usize;
    let cols = images.u32("column count")? as usize;
    let dim = rows * cols;
    let pixels = images.body(n * dim, "pixels")?;

    let mut labels = Reader::open(label_path)?;
    labels.expect_magic(IDX_LABELS_MAGIC)?;
    let m = labels.u32("label count")? as usize;
    if m != n {
        return Err(Error::Consistency(format!("{n} images but {m} labels")));
    }
    let raw_labels = labels.body(m, "labels")?;

    let scale = T::one() / T::of(255.0);
    let inputs = Array2::from_shape_fn((n, dim), |(i, j)| T::of(pixels[i * dim + j] as f64) * scale);
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    let mut ds = Dataset::new(inputs, labels, classes, Provenance::Mnist)?;
    ds.image_shape = Some((rows, cols));
    Ok(ds)
}

pub fn write_idx_images(path: &Path, pixels: &[u8], count: usize, rows: usize, cols: usize) -> Result<()> {
    if pixels.len() != count * rows * cols {
        return Err(Error::Consistency(format!(
            "{} pixel bytes for {count} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

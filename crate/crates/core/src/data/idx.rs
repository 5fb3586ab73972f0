//! IDX container (MNIST format): big-endian header, one byte per value.

use std::path::Path;

use crate::data::RawImages;
use crate::error::{Error, Result};
use crate::net::InputShape;

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;
const CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn header(bytes: &[u8], words: usize, path: &Path) -> Result<Vec<u32>> {
    if bytes.len() < 4 * words {
        return Err(Error::data(path, format!("file of {} bytes is too short for a header", bytes.len())));
    }
    Ok(bytes[..4 * words]
        .chunks(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// `(count, rows, cols, pixels)` of an IDX image file.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read(path)?;
    let h = header(&bytes, 4, path)?;
    if h[0] != IMAGE_MAGIC {
        return Err(Error::data(path, format!("bad magic {} (expected {IMAGE_MAGIC})", h[0])));
    }
    let (n, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let want = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::data(path, "header dimensions overflow"))?;
    let payload = &bytes[16..];
    if payload.len() != want {
        return Err(Error::data(
            path,
            format!("payload has {} bytes, header promises {want}", payload.len()),
        ));
    }
    Ok((n, rows, cols, payload.to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read(path)?;
    let h = header(&bytes, 2, path)?;
    if h[0] != LABEL_MAGIC {
        return Err(Error::data(path, format!("bad magic {} (expected {LABEL_MAGIC})", h[0])));
    }
    let payload = &bytes[8..];
    if payload.len() != h[1] as usize {
        return Err(Error::data(
            path,
            format!("payload has {} bytes, header promises {}", payload.len(), h[1]),
        ));
    }
    Ok(payload.to_vec())
}

/// Loads an IDX image/label pair with pixels scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<RawImages> {
    let (n, rows, cols, pixels) = read_idx_images(images)?;
    let labels_raw = read_idx_labels(labels)?;
    if labels_raw.len() != n {
        return Err(Error::data(
            labels,
            format!("{} labels for {n} images", labels_raw.len()),
        ));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::data(images, "empty image set"));
    }
    if let Some(bad) = labels_raw.iter().find(|&&l| l as usize >= CLASSES) {
        return Err(Error::data(labels, format!("label {bad} outside 0..{CLASSES}")));
    }
    Ok(RawImages {
        shape: InputShape {
            channels: 1,
            height: rows,
            width: cols,
        },
        pixels: pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        labels: labels_raw.iter().map(|&l| l as usize).collect(),
        n_classes: CLASSES,
    })
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    for v in [LABEL_MAGIC, labels.len() as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(labels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

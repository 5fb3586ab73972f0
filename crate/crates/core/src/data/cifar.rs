//! CIFAR-10 binary batches: records of one label byte and 3072 channel-planar
//! pixel bytes.

use std::path::{Path, PathBuf};

use crate::data::RawImages;
use crate::error::{Error, Result};
use crate::net::InputShape;

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
const CLASSES: usize = 10;

/// `(labels, pixels)` of one batch file.
pub fn read_cifar_binary(path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::data(
            path,
            format!("{} bytes is not a whole number of {CIFAR_RECORD}-byte records", bytes.len()),
        ));
    }
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut pixels = Vec::with_capacity(bytes.len());
    for rec in bytes.chunks(CIFAR_RECORD) {
        if rec[0] as usize >= CLASSES {
            return Err(Error::data(path, format!("label {} outside 0..{CLASSES}", rec[0])));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

pub fn load_cifar_binary(paths: &[PathBuf]) -> Result<RawImages> {
    if paths.is_empty() {
        return Err(Error::data(PathBuf::new(), "no CIFAR batch files given"));
    }
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for p in paths {
        let (l, px) = read_cifar_binary(p)?;
        labels.extend(l.into_iter().map(usize::from));
        pixels.extend(px.into_iter().map(|b| b as f32 / 255.0));
    }
    Ok(RawImages {
        shape: InputShape {
            channels: 3,
            height: 32,
            width: 32,
        },
        pixels,
        labels,
        n_classes: CLASSES,
    })
}

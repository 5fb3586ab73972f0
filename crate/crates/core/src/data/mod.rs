//! Dataset loading, normalization, augmentation and seeded batching.

mod augment;
mod cifar;
mod idx;
pub mod synth;

pub use augment::{augment, augment_with, flip_horizontal};
pub use cifar::{load_cifar_binary, read_cifar_binary, CIFAR_RECORD};
pub use idx::{
    load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, TEST_IMAGES, TEST_LABELS,
    TRAIN_IMAGES, TRAIN_LABELS,
};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::net::InputShape;
use crate::tensor::FpTensor;

/// Images with pixels in `[0, 1]`, before normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImages {
    pub shape: InputShape,
    pub pixels: Vec<f32>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl RawImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `per_class` samples of every class, in file order.
    pub fn subset_per_class(&self, per_class: usize) -> RawImages {
        let f = self.shape.features();
        let mut seen = vec![0usize; self.n_classes];
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if seen[l] < per_class {
                seen[l] += 1;
                labels.push(l);
                pixels.extend_from_slice(&self.pixels[i * f..(i + 1) * f]);
            }
        }
        RawImages {
            shape: self.shape,
            pixels,
            labels,
            n_classes: self.n_classes,
        }
    }
}

/// Per-channel standardization constants.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn fit(raw: &RawImages) -> Self {
        let c = raw.shape.channels;
        let plane = raw.shape.height * raw.shape.width;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for sample in raw.pixels.chunks(c * plane) {
            for (ch, values) in sample.chunks(plane).enumerate() {
                for &v in values {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let n = (raw.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n - m * m).max(0.0).sqrt();
                if s > 1e-6 {
                    s as f32
                } else {
                    1.0
                }
            })
            .collect();
        Normalization {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    fn plane(&self, shape: &InputShape) -> Result<usize> {
        if self.mean.len() != shape.channels || self.std.len() != shape.channels {
            return Err(Error::Config(format!(
                "normalization has {} channels, images {}",
                self.mean.len(),
                shape.channels
            )));
        }
        Ok(shape.height * shape.width)
    }

    pub fn apply(&self, shape: &InputShape, pixels: &[f32]) -> Result<Vec<f32>> {
        let plane = self.plane(shape)?;
        Ok(pixels
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / plane) % shape.channels;
                (v - self.mean[ch]) / self.std[ch]
            })
            .collect())
    }

    pub fn invert(&self, shape: &InputShape, values: &[f32]) -> Result<Vec<f32>> {
        let plane = self.plane(shape)?;
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / plane) % shape.channels;
                v * self.std[ch] + self.mean[ch]
            })
            .collect())
    }

    /// Normalized value of a black (zero) pixel per channel.
    pub fn black(&self) -> Vec<f32> {
        self.mean.iter().zip(&self.std).map(|(m, s)| -m / s).collect()
    }
}

/// Normalized images ready for training or evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub shape: InputShape,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub norm: Normalization,
}

impl Dataset {
    /// Normalizes with `norm`, or with the images' own statistics.
    pub fn new(raw: RawImages, norm: Option<Normalization>) -> Result<Self> {
        let norm = norm.unwrap_or_else(|| Normalization::fit(&raw));
        let images = norm.apply(&raw.shape, &raw.pixels)?;
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("dataset", "non-finite pixel after normalization"));
        }
        Ok(Dataset {
            shape: raw.shape,
            images,
            labels: raw.labels,
            n_classes: raw.n_classes,
            norm,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let f = self.shape.features();
        &self.images[i * f..(i + 1) * f]
    }

    /// Stacks the given samples into `[n × features]`, optionally augmented.
    pub fn gather<R: Rng>(&self, indices: &[usize], augment_rng: Option<&mut R>) -> Result<(FpTensor<f32>, Vec<usize>)> {
        let f = self.shape.features();
        let mut data = Vec::with_capacity(indices.len() * f);
        match augment_rng {
            Some(rng) => {
                let black = self.norm.black();
                for &i in indices {
                    data.extend(augment(self.image(i), &self.shape, &black, rng));
                }
            }
            None => {
                for &i in indices {
                    data.extend_from_slice(self.image(i));
                }
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((FpTensor::new(vec![indices.len(), f], data)?, labels))
    }
}

/// Sample indices of each batch. With `shuffle` the order is a seeded
/// permutation; `drop_last` discards a trailing partial batch.
pub fn batches<R: Rng>(n: usize, batch_size: usize, shuffle: Option<&mut R>, drop_last: bool) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(rng) = shuffle {
        order.shuffle(rng);
    }
    order
        .chunks(batch_size)
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

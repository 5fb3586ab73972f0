//! Procedurally drawn handwritten-style digits in the MNIST layout (28×28,
//! one byte per pixel), for machines without the real dataset.
//!
//! Each class is a stroke template. Every sample jitters the control points,
//! applies a random rotation, scale, shear and shift, varies the pen width
//! and adds pixel noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::idx::{write_idx_images, write_idx_labels, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use crate::error::{Error, Result};

pub const SIDE: usize = 28;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, steps: usize) -> Stroke {
    (0..=steps)
        .map(|i| {
            let t = (from + (to - from) * i as f64 / steps as f64).to_radians();
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Strokes in a unit box, y pointing down.
fn template(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.28, 0.4, 0.0, 360.0, 24)],
        1 => vec![vec![(0.35, 0.25), (0.55, 0.1), (0.55, 0.9)]],
        2 => {
            let mut s = arc(0.5, 0.32, 0.27, 0.22, 190.0, 380.0, 10);
            s.extend([(0.22, 0.88), (0.8, 0.88)]);
            vec![s]
        }
        3 => vec![
            arc(0.47, 0.3, 0.25, 0.2, 200.0, 450.0, 12),
            arc(0.47, 0.68, 0.28, 0.22, 270.0, 520.0, 12),
        ],
        4 => vec![vec![(0.62, 0.1), (0.18, 0.62), (0.82, 0.62)], vec![(0.62, 0.1), (0.62, 0.9)]],
        5 => {
            let mut s = vec![(0.75, 0.12), (0.3, 0.12), (0.27, 0.45)];
            s.extend(arc(0.48, 0.64, 0.28, 0.25, 220.0, 500.0, 12));
            vec![s]
        }
        6 => {
            let mut s = vec![(0.65, 0.1), (0.38, 0.4)];
            s.extend(arc(0.5, 0.66, 0.25, 0.24, 200.0, 560.0, 16));
            vec![s]
        }
        7 => vec![vec![(0.2, 0.12), (0.8, 0.12), (0.42, 0.9)], vec![(0.38, 0.5), (0.7, 0.5)]],
        8 => vec![
            arc(0.5, 0.3, 0.2, 0.19, 0.0, 360.0, 16),
            arc(0.5, 0.7, 0.25, 0.21, 0.0, 360.0, 16),
        ],
        9 => {
            let mut s = arc(0.5, 0.33, 0.24, 0.22, 0.0, 360.0, 16);
            s.extend([(0.74, 0.33), (0.62, 0.9)]);
            vec![s]
        }
        _ => unreachable!("digit {digit}"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// One `SIDE × SIDE` image of `digit`.
pub fn draw_digit<R: Rng>(digit: u8, rng: &mut R) -> Vec<u8> {
    let angle = rng.gen_range(-0.3f64..0.3);
    let scale = rng.gen_range(0.75..1.1);
    let aspect = rng.gen_range(0.8..1.2);
    let shear = rng.gen_range(-0.35..0.35);
    let shift = (rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5));
    let pen = rng.gen_range(0.9..2.3);
    let wobble = 0.07;
    let (sin, cos) = angle.sin_cos();
    let box_side = 20.0;
    let strokes: Vec<Stroke> = template(digit)
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|(x, y)| {
                    let x = x + rng.gen_range(-wobble..wobble) - 0.5;
                    let y = y + rng.gen_range(-wobble..wobble) - 0.5;
                    let x = (x + shear * y) * aspect;
                    let (rx, ry) = (cos * x - sin * y, sin * x + cos * y);
                    (
                        rx * box_side * scale + SIDE as f64 / 2.0 + shift.0,
                        ry * box_side * scale + SIDE as f64 / 2.0 + shift.1,
                    )
                })
                .collect()
        })
        .collect();
    let mut img = Vec::with_capacity(SIDE * SIDE);
    for py in 0..SIDE {
        for px in 0..SIDE {
            let p = (px as f64 + 0.5, py as f64 + 0.5);
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min);
            let ink = (1.0 - (d - pen / 2.0)).clamp(0.0, 1.0);
            let noise = rng.gen_range(-0.12..0.12);
            img.push(((ink + noise).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    img
}

/// `n` images with balanced, shuffled labels.
pub fn generate(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    labels.shuffle(&mut rng);
    let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
    for &l in &labels {
        pixels.extend(draw_digit(l, &mut rng));
    }
    (pixels, labels)
}

/// Writes train and test IDX files under the usual MNIST names.
pub fn write_dataset(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (px, lb) = generate(n_train, seed);
    write_idx_images(&dir.join(TRAIN_IMAGES), SIDE, SIDE, &px)?;
    write_idx_labels(&dir.join(TRAIN_LABELS), &lb)?;
    let (px, lb) = generate(n_test, seed ^ 0x5eed_7e57);
    write_idx_images(&dir.join(TEST_IMAGES), SIDE, SIDE, &px)?;
    write_idx_labels(&dir.join(TEST_LABELS), &lb)
}

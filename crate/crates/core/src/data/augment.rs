use rand::Rng;

use crate::net::InputShape;

const PAD: usize = 4;

/// Pads by 4 with `pad_value` (per channel), crops back to the native size at
/// offset `(dy, dx)` in `0..=8`, and optionally mirrors horizontally.
pub fn augment_with(image: &[f32], shape: &InputShape, pad_value: &[f32], dy: usize, dx: usize, flip: bool) -> Vec<f32> {
    let (h, w) = (shape.height, shape.width);
    let mut out = Vec::with_capacity(image.len());
    for c in 0..shape.channels {
        let plane = &image[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let sx = if flip { w - 1 - x } else { x };
                let (py, px) = (y + dy, sx + dx);
                let inside = py >= PAD && py < h + PAD && px >= PAD && px < w + PAD;
                out.push(if inside {
                    plane[(py - PAD) * w + (px - PAD)]
                } else {
                    pad_value[c]
                });
            }
        }
    }
    out
}

/// Random crop and horizontal flip (p = 0.5).
pub fn augment<R: Rng>(image: &[f32], shape: &InputShape, pad_value: &[f32], rng: &mut R) -> Vec<f32> {
    let dy = rng.gen_range(0..=2 * PAD);
    let dx = rng.gen_range(0..=2 * PAD);
    let flip = rng.gen_bool(0.5);
    augment_with(image, shape, pad_value, dy, dx, flip)
}

pub fn flip_horizontal(image: &[f32], shape: &InputShape) -> Vec<f32> {
    augment_with(image, shape, &vec![0.0; shape.channels], PAD, PAD, true)
}

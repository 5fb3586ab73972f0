//! im2col lowering so convolutions run through the same GEMM paths as dense
//! layers.

use crate::tensor::{FpTensor, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.in_height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Output positions per channel.
    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn in_features(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn out_features(&self) -> usize {
        self.out_channels * self.positions()
    }
}

/// `[batch × C·H·W]` → `[batch·positions × C·k·k]`. Out-of-image taps read
/// `pad_value`.
pub fn im2col<T: Real>(input: &FpTensor<T>, g: &ConvGeometry, pad_value: T) -> FpTensor<T> {
    let batch = input.len() / g.in_features();
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let fan_in = g.fan_in();
    let mut out = vec![pad_value; batch * oh * ow * fan_in];
    let data = input.data();
    for b in 0..batch {
        let sample = &data[b * g.in_features()..(b + 1) * g.in_features()];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * fan_in;
                for c in 0..g.in_channels {
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.in_height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= g.in_width as isize {
                                continue;
                            }
                            out[row + (c * k + ky) * k + kx] = sample
                                [(c * g.in_height + iy as usize) * g.in_width + ix as usize];
                        }
                    }
                }
            }
        }
    }
    FpTensor::from_parts(vec![batch * oh * ow, fan_in], out)
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input,
/// dropping padded taps.
pub fn col2im<T: Real>(cols: &FpTensor<T>, g: &ConvGeometry, batch: usize) -> FpTensor<T> {
    let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
    let fan_in = g.fan_in();
    let mut out = vec![T::zero(); batch * g.in_features()];
    let data = cols.data();
    for b in 0..batch {
        let base = b * g.in_features();
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * fan_in;
                for c in 0..g.in_channels {
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.in_height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= g.in_width as isize {
                                continue;
                            }
                            let dst = base + (c * g.in_height + iy as usize) * g.in_width + ix as usize;
                            out[dst] = out[dst] + data[row + (c * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    FpTensor::from_parts(vec![batch, g.in_features()], out)
}

/// `[batch·P × C]` (GEMM output) → `[batch × C·P]` (channel-planar).
pub fn rows_to_planar<T: Real>(rows: &FpTensor<T>, batch: usize, positions: usize) -> FpTensor<T> {
    let channels = rows.len() / (batch * positions).max(1);
    let src = rows.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..batch {
        for p in 0..positions {
            for c in 0..channels {
                out[(b * channels + c) * positions + p] = src[(b * positions + p) * channels + c];
            }
        }
    }
    FpTensor::from_parts(vec![batch, channels * positions], out)
}

/// Inverse of [`rows_to_planar`].
pub fn planar_to_rows<T: Real>(planar: &FpTensor<T>, batch: usize, positions: usize) -> FpTensor<T> {
    let channels = planar.len() / (batch * positions).max(1);
    let src = planar.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..batch {
        for p in 0..positions {
            for c in 0..channels {
                out[(b * positions + p) * channels + c] = src[(b * channels + c) * positions + p];
            }
        }
    }
    FpTensor::from_parts(vec![batch * positions, channels], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometry() -> ConvGeometry {
        ConvGeometry {
            in_channels: 2,
            in_height: 5,
            in_width: 4,
            out_channels: 3,
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }

    /// Direct convolution, no lowering.
    fn direct_conv(x: &[f64], w: &[f64], g: &ConvGeometry) -> Vec<f64> {
        let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
        let mut out = vec![0.0; g.out_features()];
        for o in 0..g.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..g.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.in_height as isize || ix >= g.in_width as isize {
                                    continue;
                                }
                                acc += w[o * g.fan_in() + (c * k + ky) * k + kx]
                                    * x[(c * g.in_height + iy as usize) * g.in_width + ix as usize];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn lowered_conv_matches_direct() {
        let g = geometry();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = 2;
        let x = FpTensor::<f64>::from_fn(&[batch, g.in_features()], |_| rng.gen_range(-1.0..1.0));
        let w = FpTensor::<f64>::from_fn(&[g.out_channels, g.fan_in()], |_| rng.gen_range(-1.0..1.0));
        let cols = im2col(&x, &g, 0.0);
        let y = rows_to_planar(&cols.matmul_nt(&w).unwrap(), batch, g.positions());
        for b in 0..batch {
            let want = direct_conv(x.row(b), w.data(), &g);
            for (a, e) in y.row(b).iter().zip(&want) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = geometry();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = FpTensor::<f64>::from_fn(&[3, g.in_features()], |_| rng.gen_range(-1.0..1.0));
        let cols = im2col(&x, &g, 0.0);
        let c = FpTensor::<f64>::from_fn(cols.shape(), |_| rng.gen_range(-1.0..1.0));
        let lhs: f64 = cols.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
        let back = col2im(&c, &g, 3);
        let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn planar_roundtrip() {
        let rows = FpTensor::<f32>::from_fn(&[2 * 6, 3], |i| i as f32);
        let planar = rows_to_planar(&rows, 2, 6);
        assert_eq!(planar_to_rows(&planar, 2, 6), rows);
    }
}

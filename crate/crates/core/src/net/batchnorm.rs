//! Batch normalization over `[batch × channels·spatial]` activations.

use crate::error::{Error, Result};
use crate::tensor::{FpTensor, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T: Real = f32> {
    pub gamma: FpTensor<T>,
    /// Learned additive shift (the BN "beta").
    pub shift: FpTensor<T>,
    pub running_mean: FpTensor<T>,
    pub running_var: FpTensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

/// Values saved by a train-mode forward for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T: Real = f32> {
    pub x_hat: FpTensor<T>,
    pub batch_mean: Vec<f64>,
    /// Biased batch variance, the one used for normalization.
    pub batch_var: Vec<f64>,
    inv_std: Vec<f64>,
    spatial: usize,
}

pub struct BnGrads<T: Real = f32> {
    pub input: FpTensor<T>,
    pub gamma: FpTensor<T>,
    pub shift: FpTensor<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: FpTensor::full(&[channels], T::one()),
            shift: FpTensor::zeros(&[channels]),
            running_mean: FpTensor::zeros(&[channels]),
            running_var: FpTensor::full(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn layout(&self, x: &FpTensor<T>, spatial: usize) -> Result<(usize, usize)> {
        let (batch, features) = x.dims2()?;
        let c = self.channels();
        if spatial == 0 || features != c * spatial {
            return Err(Error::dimension(
                "batchnorm",
                format!("{features} features vs {c} channels x {spatial} positions"),
            ));
        }
        Ok((batch, c))
    }

    /// Normalizes with batch statistics. Returns the output, the backward
    /// cache, and leaves running statistics untouched; see
    /// [`BatchNorm::update_running`].
    pub fn forward_train(
        &self,
        x: &FpTensor<T>,
        spatial: usize,
    ) -> Result<(FpTensor<T>, BnCache<T>)> {
        let (batch, c) = self.layout(x, spatial)?;
        let count = batch * spatial;
        if count < 2 {
            return Err(Error::numeric(
                "batchnorm",
                "train mode needs at least two values per channel",
            ));
        }
        let data = x.data();
        let features = c * spatial;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for b in 0..batch {
            for ch in 0..c {
                let base = b * features + ch * spatial;
                for v in &data[base..base + spatial] {
                    mean[ch] += v.as_f64();
                }
            }
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        for b in 0..batch {
            for ch in 0..c {
                let base = b * features + ch * spatial;
                for v in &data[base..base + spatial] {
                    let d = v.as_f64() - mean[ch];
                    var[ch] += d * d;
                }
            }
        }
        for v in &mut var {
            *v /= count as f64;
        }
        if mean.iter().chain(&var).any(|v| !v.is_finite()) {
            return Err(Error::numeric("batchnorm", "non-finite batch statistics"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut x_hat = vec![T::zero(); data.len()];
        let mut y = vec![T::zero(); data.len()];
        let gamma = self.gamma.data();
        let shift = self.shift.data();
        for b in 0..batch {
            for ch in 0..c {
                let base = b * features + ch * spatial;
                let (g, s) = (gamma[ch].as_f64(), shift[ch].as_f64());
                for i in base..base + spatial {
                    let xh = (data[i].as_f64() - mean[ch]) * inv_std[ch];
                    x_hat[i] = T::from_f64_lossy(xh);
                    y[i] = T::from_f64_lossy(g * xh + s);
                }
            }
        }
        let cache = BnCache {
            x_hat: FpTensor::from_parts(x.shape().to_vec(), x_hat),
            batch_mean: mean,
            batch_var: var,
            inv_std,
            spatial,
        };
        Ok((FpTensor::from_parts(x.shape().to_vec(), y), cache))
    }

    /// Exponential moving update with the unbiased batch variance.
    pub fn update_running(&mut self, cache: &BnCache<T>, batch: usize) {
        let count = (batch * cache.spatial) as f64;
        let m = self.momentum;
        let correction = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        for (r, &bm) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = T::from_f64_lossy((1.0 - m) * r.as_f64() + m * bm);
        }
        for (r, &bv) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = T::from_f64_lossy((1.0 - m) * r.as_f64() + m * bv * correction);
        }
    }

    pub fn forward_eval(&self, x: &FpTensor<T>, spatial: usize) -> Result<FpTensor<T>> {
        let (batch, c) = self.layout(x, spatial)?;
        let features = c * spatial;
        let data = x.data();
        let mut y = vec![T::zero(); data.len()];
        for ch in 0..c {
            let inv_std = 1.0 / (self.running_var.data()[ch].as_f64() + self.eps).sqrt();
            let mean = self.running_mean.data()[ch].as_f64();
            let g = self.gamma.data()[ch].as_f64();
            let s = self.shift.data()[ch].as_f64();
            for b in 0..batch {
                let base = b * features + ch * spatial;
                for i in base..base + spatial {
                    y[i] = T::from_f64_lossy(g * (data[i].as_f64() - mean) * inv_std + s);
                }
            }
        }
        FpTensor::new(x.shape().to_vec(), y)
    }

    pub fn backward(&self, grad_y: &FpTensor<T>, cache: &BnCache<T>) -> Result<BnGrads<T>> {
        if grad_y.shape() != cache.x_hat.shape() {
            return Err(Error::dimension(
                "batchnorm_backward",
                format!("{:?} vs {:?}", grad_y.shape(), cache.x_hat.shape()),
            ));
        }
        let spatial = cache.spatial;
        let (batch, c) = self.layout(grad_y, spatial)?;
        let features = c * spatial;
        let count = (batch * spatial) as f64;
        let dy = grad_y.data();
        let xh = cache.x_hat.data();

        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xh = vec![0.0f64; c];
        for b in 0..batch {
            for ch in 0..c {
                let base = b * features + ch * spatial;
                for i in base..base + spatial {
                    sum_dy[ch] += dy[i].as_f64();
                    sum_dy_xh[ch] += dy[i].as_f64() * xh[i].as_f64();
                }
            }
        }
        let mut dx = vec![T::zero(); dy.len()];
        for b in 0..batch {
            for ch in 0..c {
                let g = self.gamma.data()[ch].as_f64();
                let k = g * cache.inv_std[ch] / count;
                let base = b * features + ch * spatial;
                for i in base..base + spatial {
                    let v = k * (count * dy[i].as_f64() - sum_dy[ch] - xh[i].as_f64() * sum_dy_xh[ch]);
                    dx[i] = T::from_f64_lossy(v);
                }
            }
        }
        let to_tensor = |v: Vec<f64>| {
            FpTensor::from_parts(vec![c], v.into_iter().map(T::from_f64_lossy).collect())
        };
        Ok(BnGrads {
            input: FpTensor::new(grad_y.shape().to_vec(), dx)?,
            gamma: to_tensor(sum_dy_xh),
            shift: to_tensor(sum_dy),
        })
    }
}

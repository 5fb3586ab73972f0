use crate::error::{Error, Result};
use crate::net::{Gradients, Network, ParamKind};
use crate::tensor::{FpTensor, Real};

/// Latent weights beyond this magnitude abort training.
pub const MAX_LATENT: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Real = f32> {
    pub velocity: Vec<FpTensor<T>>,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(net: &Network<T>, lr0: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerState {
            velocity: net.params().iter().map(|(_, _, p)| FpTensor::zeros(p.shape())).collect(),
            lr0,
            momentum,
            weight_decay,
            step: 0,
        }
    }
}

/// `lr0 · ½ · (1 + cos(π · epoch / total))`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr0: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::Config("cosine schedule needs at least one epoch".into()));
    }
    if epoch > total_epochs {
        return Err(Error::Config(format!("epoch {epoch} beyond {total_epochs}")));
    }
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos()))
}

/// `v ← μv + g + wd·w`, `w ← w − lr·v` on every latent tensor; batch-norm
/// parameters get no weight decay.
pub fn sgd_step<T: Real>(net: &mut Network<T>, grads: &Gradients<T>, opt: &mut OptimizerState<T>, lr: f64) -> Result<()> {
    let g = grads.tensors();
    let names: Vec<String> = net.params().into_iter().map(|(n, _, _)| n).collect();
    if g.len() != opt.velocity.len() || g.len() != names.len() {
        return Err(Error::dimension("sgd_step", "gradient set does not match the network"));
    }
    for (name, grad) in names.iter().zip(&g) {
        if !grad.is_finite() {
            return Err(Error::numeric(format!("gradient of {name}"), "non-finite value"));
        }
    }
    let mu = T::from_f64_lossy(opt.momentum);
    let wd = T::from_f64_lossy(opt.weight_decay);
    let lr = T::from_f64_lossy(lr);
    let velocity = &mut opt.velocity;
    let worst = net.update_params(|params| -> Result<f64> {
        let mut worst = 0.0f64;
        for (((name, kind, w), v), grad) in params.into_iter().zip(velocity.iter_mut()).zip(&g) {
            if w.shape() != grad.shape() || v.shape() != grad.shape() {
                return Err(Error::dimension("sgd_step", format!("shape mismatch for {name}")));
            }
            let decay = if kind == ParamKind::Weight { wd } else { T::zero() };
            let wd_ = w.data_mut();
            let vd = v.data_mut();
            for ((wi, vi), &gi) in wd_.iter_mut().zip(vd.iter_mut()).zip(grad.data()) {
                *vi = mu * *vi + gi + decay * *wi;
                *wi = *wi - lr * *vi;
            }
            let m = w.max_abs().as_f64();
            if !(m < MAX_LATENT) {
                return Err(Error::numeric(
                    format!("latent weights {name}"),
                    format!("max |w| = {m} reached the divergence guard {MAX_LATENT}"),
                ));
            }
            worst = worst.max(m);
        }
        Ok(worst)
    })?;
    debug_assert!(worst < MAX_LATENT);
    opt.step += 1;
    Ok(())
}

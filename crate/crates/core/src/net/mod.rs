//! Binary neural network: layers, forward/backward passes, parameters.

pub mod arch;
pub mod batchnorm;
pub mod conv;
mod network;

pub use arch::{ArchSpec, InputShape, LayerDef, LayerSpec};
pub use batchnorm::{BatchNorm, BnCache, BnGrads};
pub use conv::ConvGeometry;
pub use network::{
    ActivationGrads, BinaryLayer, ForwardCache, Gradients, LayerCache, LayerGrads, Network,
    ParamKind,
};

use crate::error::{Error, Result};
use crate::tensor::{FpTensor, Real};

/// Bank embedding of a layer activation `[B × C·P]`: the activation itself
/// for dense layers, the per-channel spatial mean for conv layers.
pub fn pool_embedding<T: Real>(a_fp: &FpTensor<T>, spec: &LayerSpec) -> Result<FpTensor<T>> {
    let (b, f) = a_fp.dims2()?;
    if f != spec.out_features() {
        return Err(Error::dimension(
            "pool_embedding",
            format!("{f} features for a layer with {}", spec.out_features()),
        ));
    }
    let positions = spec.positions();
    if positions == 1 {
        return Ok(a_fp.clone());
    }
    let c = spec.out_channels();
    let mut out = Vec::with_capacity(b * c);
    for i in 0..b {
        for plane in a_fp.row(i).chunks(positions) {
            let mut acc = 0.0f64;
            for v in plane {
                acc += v.as_f64();
            }
            out.push(T::from_f64_lossy(acc / positions as f64));
        }
    }
    FpTensor::new(vec![b, c], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How `sign` is evaluated. `Soft` replaces it by `tanh(10x)` everywhere so the
/// whole network is differentiable; it exists for gradient checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignMode {
    Hard,
    Soft,
}

const SOFT_SLOPE: f64 = 10.0;

impl SignMode {
    pub fn apply<T: Real>(self, x: &FpTensor<T>) -> FpTensor<T> {
        match self {
            SignMode::Hard => x.map(|v| if v >= T::zero() { T::one() } else { -T::one() }),
            SignMode::Soft => {
                let k = T::from_f64_lossy(SOFT_SLOPE);
                x.map(|v| (k * v).tanh())
            }
        }
    }

    /// Gradient through the sign given the gradient at its output and its input.
    pub fn backward<T: Real>(self, grad: &FpTensor<T>, input: &FpTensor<T>) -> Result<FpTensor<T>> {
        match self {
            SignMode::Hard => ste_backward(grad, input),
            SignMode::Soft => {
                check_same(grad, input, "soft sign backward")?;
                let k = T::from_f64_lossy(SOFT_SLOPE);
                let data = grad
                    .data()
                    .iter()
                    .zip(input.data())
                    .map(|(&g, &x)| {
                        let t = (k * x).tanh();
                        g * k * (T::one() - t * t)
                    })
                    .collect();
                FpTensor::new(grad.shape().to_vec(), data)
            }
        }
    }
}

/// Straight-through estimator: passes `grad` where `|input| <= 1`, zero elsewhere.
pub fn ste_backward<T: Real>(grad: &FpTensor<T>, input: &FpTensor<T>) -> Result<FpTensor<T>> {
    check_same(grad, input, "ste_backward")?;
    let data = grad
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x.abs() <= T::one() { g } else { T::zero() })
        .collect();
    FpTensor::new(grad.shape().to_vec(), data)
}

fn check_same<T: Real>(a: &FpTensor<T>, b: &FpTensor<T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ste_clips_outside_unit_window() {
        let x = FpTensor::<f32>::new(vec![1, 5], vec![-2.0, -1.0, 0.0, 0.5, 1.5]).unwrap();
        let g = FpTensor::full(&[1, 5], 3.0f32);
        assert_eq!(ste_backward(&g, &x).unwrap().data(), &[0.0, 3.0, 3.0, 3.0, 0.0]);
    }

    #[test]
    fn hard_sign_of_zero_is_positive() {
        let x = FpTensor::<f32>::new(vec![1, 3], vec![0.0, -0.0, -1e-30]).unwrap();
        assert_eq!(SignMode::Hard.apply(&x).data(), &[1.0, 1.0, -1.0]);
    }
}

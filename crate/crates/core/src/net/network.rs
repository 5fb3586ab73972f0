//! Binary network with latent full-precision weights.
//!
//! Layer `k < K`: GEMM (float for the first layer, xnor-popcount for hidden
//! layers) → batch norm → `A_F^k`, then `A_B^k = sign(A_F^k)`. The output layer
//! keeps float weights, reads the full-precision `A_F^{K-1}` and emits logits
//! directly. No layer has a bias term.

use rand::Rng;

use crate::error::{Error, Result};
use crate::net::arch::{ArchSpec, LayerSpec};
use crate::net::batchnorm::{BatchNorm, BnCache};
use crate::net::conv::{col2im, im2col, planar_to_rows, rows_to_planar};
use crate::net::{Mode, SignMode};
use crate::tensor::{sign_binarize, xnor_matmul_nt, BitTensor, FpTensor, Real};

#[derive(Clone, Debug)]
pub struct BinaryLayer<T: Real = f32> {
    spec: LayerSpec,
    w_latent: FpTensor<T>,
    w_binary: BitTensor,
    bn: Option<BatchNorm<T>>,
    is_fp_edge: bool,
}

impl<T: Real> BinaryLayer<T> {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn w_latent(&self) -> &FpTensor<T> {
        &self.w_latent
    }

    /// `sign(w_latent)`, refreshed whenever the latent weights change.
    pub fn w_binary(&self) -> &BitTensor {
        &self.w_binary
    }

    pub fn bn(&self) -> Option<&BatchNorm<T>> {
        self.bn.as_ref()
    }

    pub fn is_fp_edge(&self) -> bool {
        self.is_fp_edge
    }

    fn refresh_binary(&mut self) {
        self.w_binary = sign_binarize(&self.w_latent);
    }
}

/// Everything one layer's forward pass leaves behind.
#[derive(Clone, Debug)]
pub struct LayerCache<T: Real = f32> {
    /// Float view of what the layer consumed: the raw input for the first
    /// layer, `A_F^{K-1}` for the output layer, otherwise the (soft-)binarized
    /// previous activation.
    pub input: FpTensor<T>,
    /// im2col patches of `input` for conv layers.
    patches: Option<FpTensor<T>>,
    /// Weights as used by the GEMM.
    w_used: FpTensor<T>,
    pub pre_bn: FpTensor<T>,
    pub bn: Option<BnCache<T>>,
    /// `A_F^k`: post-BN activation (logits for the output layer).
    pub a_fp: FpTensor<T>,
    /// `A_B^k = sign(A_F^k)`.
    pub a_bin: BitTensor,
}

#[derive(Clone, Debug)]
pub struct ForwardCache<T: Real = f32> {
    pub layers: Vec<LayerCache<T>>,
    pub mode: Mode,
    pub sign_mode: SignMode,
    pub batch: usize,
}

impl<T: Real> ForwardCache<T> {
    /// Cache of 1-based layer `k`.
    pub fn layer(&self, k: usize) -> Option<&LayerCache<T>> {
        k.checked_sub(1).and_then(|i| self.layers.get(i))
    }

    pub fn logits(&self) -> &FpTensor<T> {
        &self.layers.last().expect("non-empty network").a_fp
    }
}

/// Extra gradients injected into activations, indexed by 0-based layer.
#[derive(Clone, Debug)]
pub struct ActivationGrads<T: Real = f32> {
    a_fp: Vec<Option<FpTensor<T>>>,
    a_bin: Vec<Option<FpTensor<T>>>,
}

impl<T: Real> ActivationGrads<T> {
    pub fn none(layers: usize) -> Self {
        ActivationGrads {
            a_fp: vec![None; layers],
            a_bin: vec![None; layers],
        }
    }

    fn accumulate(slot: &mut Option<FpTensor<T>>, grad: FpTensor<T>) -> Result<()> {
        match slot {
            Some(existing) => existing.add_assign(&grad),
            None => {
                *slot = Some(grad);
                Ok(())
            }
        }
    }

    /// Adds a gradient w.r.t. `A_F^k` (1-based `k`).
    pub fn add_fp(&mut self, k: usize, grad: FpTensor<T>) -> Result<()> {
        let slot = self.slot_index(k)?;
        Self::accumulate(&mut self.a_fp[slot], grad)
    }

    /// Adds a gradient w.r.t. `A_B^k`; it reaches `A_F^k` through the STE.
    pub fn add_bin(&mut self, k: usize, grad: FpTensor<T>) -> Result<()> {
        let slot = self.slot_index(k)?;
        Self::accumulate(&mut self.a_bin[slot], grad)
    }

    fn slot_index(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.a_fp.len() {
            return Err(Error::dimension("ActivationGrads", format!("layer {k} out of range")));
        }
        Ok(k - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.a_fp.iter().chain(&self.a_bin).all(Option::is_none)
    }
}

#[derive(Clone, Debug)]
pub struct LayerGrads<T: Real = f32> {
    pub weight: FpTensor<T>,
    pub gamma: Option<FpTensor<T>>,
    pub shift: Option<FpTensor<T>>,
}

/// Gradients for every trainable tensor, aligned with [`Network::params`].
#[derive(Clone, Debug)]
pub struct Gradients<T: Real = f32> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn tensors(&self) -> Vec<&FpTensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            if let (Some(g), Some(s)) = (&l.gamma, &l.shift) {
                out.push(g);
                out.push(s);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Latent weights; weight decay applies.
    Weight,
    /// Batch-norm scale and shift; no weight decay.
    BnAffine,
}

#[derive(Clone, Debug)]
pub struct Network<T: Real = f32> {
    layers: Vec<BinaryLayer<T>>,
    tap_layers: Vec<usize>,
    input_features: usize,
    sign_mode: SignMode,
}

impl<T: Real> Network<T> {
    /// Glorot-uniform latent weights, identity batch norm.
    pub fn new<R: Rng>(arch: &ArchSpec, rng: &mut R) -> Result<Self> {
        let specs = arch.resolve()?;
        let k = specs.len();
        let layers = specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                let [rows, fan_in] = spec.weight_shape();
                let fan_out = match spec {
                    LayerSpec::Conv(g) => g.out_channels * g.kernel * g.kernel,
                    LayerSpec::Dense { outputs, .. } => outputs,
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w_latent = FpTensor::from_fn(&[rows, fan_in], |_| {
                    T::from_f64_lossy(rng.gen_range(-bound..bound))
                });
                let is_output = i + 1 == k;
                let mut layer = BinaryLayer {
                    spec,
                    w_binary: sign_binarize(&w_latent),
                    w_latent,
                    bn: (!is_output).then(|| BatchNorm::new(spec.out_channels())),
                    is_fp_edge: i == 0 || is_output,
                };
                layer.refresh_binary();
                layer
            })
            .collect();
        Ok(Network {
            layers,
            tap_layers: arch.tap_layers.clone(),
            input_features: arch.input.features(),
            sign_mode: SignMode::Hard,
        })
    }

    pub fn layers(&self) -> &[BinaryLayer<T>] {
        &self.layers
    }

    /// Number of layers `K`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// 1-based indices of layers contributing NCE terms.
    pub fn tap_layers(&self) -> &[usize] {
        &self.tap_layers
    }

    pub fn input_features(&self) -> usize {
        self.input_features
    }

    pub fn sign_mode(&self) -> SignMode {
        self.sign_mode
    }

    /// Switches every sign to `tanh(10x)`; only meant for gradient checking.
    pub fn set_sign_mode(&mut self, mode: SignMode) {
        self.sign_mode = mode;
    }

    /// Train-mode forward: batch statistics, running statistics updated.
    pub fn forward(&mut self, x: &FpTensor<T>, mode: Mode) -> Result<(FpTensor<T>, ForwardCache<T>)> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => {
                for layer in &mut self.layers {
                    layer.refresh_binary();
                }
                let cache = self.run(x, Mode::Train, self.depth())?;
                for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
                    if let (Some(bn), Some(bc)) = (layer.bn.as_mut(), lc.bn.as_ref()) {
                        bn.update_running(bc, cache.batch);
                    }
                }
                Ok((cache.logits().clone(), cache))
            }
        }
    }

    /// Eval-mode forward with running statistics; touches no state.
    pub fn forward_eval(&self, x: &FpTensor<T>) -> Result<(FpTensor<T>, ForwardCache<T>)> {
        let cache = self.run(x, Mode::Eval, self.depth())?;
        Ok((cache.logits().clone(), cache))
    }

    /// Train-mode forward that leaves running statistics alone.
    pub fn forward_train_frozen(&self, x: &FpTensor<T>) -> Result<(FpTensor<T>, ForwardCache<T>)> {
        let cache = self.run(x, Mode::Train, self.depth())?;
        Ok((cache.logits().clone(), cache))
    }

    /// `f^k(x)`: eval-mode output `A_F^k` of the first `k` layers.
    pub fn sectional_forward(&self, x: &FpTensor<T>, k: usize) -> Result<FpTensor<T>> {
        if k == 0 || k > self.depth() {
            return Err(Error::dimension(
                "sectional_forward",
                format!("k = {k} outside 1..={}", self.depth()),
            ));
        }
        let cache = self.run(x, Mode::Eval, k)?;
        Ok(cache.layers.into_iter().last().expect("k >= 1").a_fp)
    }

    fn run(&self, x: &FpTensor<T>, mode: Mode, upto: usize) -> Result<ForwardCache<T>> {
        let (batch, features) = x.dims2()?;
        if features != self.input_features {
            return Err(Error::dimension(
                "forward",
                format!("input has {features} features, network expects {}", self.input_features),
            ));
        }
        if batch == 0 {
            return Err(Error::dimension("forward", "empty batch"));
        }
        if mode == Mode::Train && batch < 2 && self.depth() > 1 {
            return Err(Error::dimension("forward", "train mode needs a batch of at least 2"));
        }
        if !x.is_finite() {
            return Err(Error::numeric("forward", "non-finite input"));
        }
        let soft = self.sign_mode == SignMode::Soft;
        let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(upto);
        let k = self.depth();
        for (i, layer) in self.layers[..upto].iter().enumerate() {
            let prev = caches.last();
            let input = match prev {
                None => x.clone(),
                Some(p) if i + 1 == k => p.a_fp.clone(),
                Some(p) if soft => self.sign_mode.apply(&p.a_fp),
                Some(p) => p.a_bin.unpack(),
            };
            let binary_hidden = !layer.is_fp_edge;
            let w_used = if !binary_hidden {
                layer.w_latent.clone()
            } else if soft {
                self.sign_mode.apply(&layer.w_latent)
            } else {
                layer.w_binary.unpack()
            };
            let (pre, patches) = match &layer.spec {
                LayerSpec::Dense { .. } => {
                    let pre = match prev {
                        Some(p) if binary_hidden && !soft => xnor_matmul_nt(&p.a_bin, &layer.w_binary)?,
                        _ => input.matmul_nt(&w_used)?,
                    };
                    (pre, None)
                }
                LayerSpec::Conv(g) => {
                    // Padded taps read 0 before binarization, i.e. +1 after it.
                    let pad = if binary_hidden && !soft { T::one() } else { T::zero() };
                    let patches = im2col(&input, g, pad);
                    let rows = if binary_hidden && !soft {
                        xnor_matmul_nt(&sign_binarize(&patches), &layer.w_binary)?
                    } else {
                        patches.matmul_nt(&w_used)?
                    };
                    (rows_to_planar(&rows, batch, g.positions()), Some(patches))
                }
            };
            let spatial = layer.spec.positions();
            let (a_fp, bn_cache) = match (&layer.bn, mode) {
                (None, _) => (pre.clone(), None),
                (Some(bn), Mode::Train) => {
                    let (y, c) = bn.forward_train(&pre, spatial)?;
                    (y, Some(c))
                }
                (Some(bn), Mode::Eval) => (bn.forward_eval(&pre, spatial)?, None),
            };
            if !a_fp.is_finite() {
                return Err(Error::numeric(format!("forward layer {}", i + 1), "non-finite activation"));
            }
            let a_bin = sign_binarize(&a_fp);
            caches.push(LayerCache {
                input,
                patches,
                w_used,
                pre_bn: pre,
                bn: bn_cache,
                a_fp,
                a_bin,
            });
        }
        Ok(ForwardCache {
            layers: caches,
            mode,
            sign_mode: self.sign_mode,
            batch,
        })
    }

    /// Backpropagates `grad_logits` plus any injected activation gradients.
    ///
    /// Signs are crossed with the clipped STE (or the exact `tanh` derivative
    /// in soft mode), both for activations and for weight binarization, so the
    /// returned weight gradients are w.r.t. the latent weights.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &FpTensor<T>,
        taps: &ActivationGrads<T>,
    ) -> Result<Gradients<T>> {
        let k = self.depth();
        if cache.mode != Mode::Train || cache.layers.len() != k || cache.sign_mode != self.sign_mode {
            return Err(Error::dimension(
                "backward",
                "cache does not come from a full train-mode forward of this network",
            ));
        }
        if taps.a_fp.len() != k {
            return Err(Error::dimension("backward", "activation taps sized for another network"));
        }
        if grad_logits.shape() != cache.logits().shape() {
            return Err(Error::dimension(
                "backward",
                format!("grad {:?} vs logits {:?}", grad_logits.shape(), cache.logits().shape()),
            ));
        }
        let batch = cache.batch;
        let mut grads: Vec<Option<LayerGrads<T>>> = vec![None; k];
        // Gradient from the layer above w.r.t. what it consumed: `A_B` of the
        // current layer, or `A_F` when the layer above is the output layer.
        let mut downstream: Option<FpTensor<T>> = None;
        for i in (0..k).rev() {
            let layer = &self.layers[i];
            let lc = &cache.layers[i];
            let feeds_output = i + 2 == k;

            let mut g_bin = if feeds_output { None } else { downstream.take() };
            if let Some(t) = &taps.a_bin[i] {
                g_bin = Some(match g_bin {
                    Some(g) => g.add(t)?,
                    None => t.clone(),
                });
            }
            let mut g_fp = match g_bin {
                Some(g) => self.sign_mode.backward(&g, &lc.a_fp)?,
                None => FpTensor::zeros(lc.a_fp.shape()),
            };
            if i + 1 == k {
                g_fp.add_assign(grad_logits)?;
            }
            if let Some(g) = downstream.take() {
                g_fp.add_assign(&g)?;
            }
            if let Some(t) = &taps.a_fp[i] {
                g_fp.add_assign(t)?;
            }

            let (g_pre, g_gamma, g_shift) = match (&layer.bn, &lc.bn) {
                (Some(bn), Some(bc)) => {
                    let bg = bn.backward(&g_fp, bc)?;
                    (bg.input, Some(bg.gamma), Some(bg.shift))
                }
                (None, _) => (g_fp, None, None),
                (Some(_), None) => {
                    return Err(Error::dimension("backward", "missing batch-norm cache"));
                }
            };

            let (g_w_used, g_input) = match &layer.spec {
                LayerSpec::Dense { .. } => {
                    let gw = g_pre.matmul_tn(&lc.input)?;
                    let gi = if i > 0 { Some(g_pre.matmul(&lc.w_used)?) } else { None };
                    (gw, gi)
                }
                LayerSpec::Conv(g) => {
                    let patches = lc.patches.as_ref().expect("conv cache keeps patches");
                    let g_rows = planar_to_rows(&g_pre, batch, g.positions());
                    let gw = g_rows.matmul_tn(patches)?;
                    let gi = if i > 0 {
                        Some(col2im(&g_rows.matmul(&lc.w_used)?, g, batch))
                    } else {
                        None
                    };
                    (gw, gi)
                }
            };
            let weight = if layer.is_fp_edge {
                g_w_used
            } else {
                self.sign_mode.backward(&g_w_used, &layer.w_latent)?
            };
            grads[i] = Some(LayerGrads {
                weight,
                gamma: g_gamma,
                shift: g_shift,
            });
            downstream = g_input;
        }
        Ok(Gradients {
            layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
        })
    }

    /// Trainable tensors in a fixed order: per layer the weight, then BN
    /// gamma and shift when present.
    pub fn params(&self) -> Vec<(String, ParamKind, &FpTensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{}.weight", i + 1), ParamKind::Weight, &l.w_latent));
            if let Some(bn) = &l.bn {
                out.push((format!("layer{}.bn.gamma", i + 1), ParamKind::BnAffine, &bn.gamma));
                out.push((format!("layer{}.bn.shift", i + 1), ParamKind::BnAffine, &bn.shift));
            }
        }
        out
    }

    /// Mutable access to trainable tensors (same order as [`Network::params`]).
    /// Binary weight caches are refreshed after `f` returns.
    pub fn update_params<R>(
        &mut self,
        f: impl FnOnce(Vec<(String, ParamKind, &mut FpTensor<T>)>) -> R,
    ) -> R {
        let mut refs = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            refs.push((format!("layer{}.weight", i + 1), ParamKind::Weight, &mut l.w_latent));
            if let Some(bn) = &mut l.bn {
                refs.push((format!("layer{}.bn.gamma", i + 1), ParamKind::BnAffine, &mut bn.gamma));
                refs.push((format!("layer{}.bn.shift", i + 1), ParamKind::BnAffine, &mut bn.shift));
            }
        }
        let out = f(refs);
        for l in &mut self.layers {
            l.refresh_binary();
        }
        out
    }

    /// Non-trainable state (BN running statistics).
    pub fn buffers(&self) -> Vec<(String, &FpTensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(bn) = &l.bn {
                out.push((format!("layer{}.bn.running_mean", i + 1), &bn.running_mean));
                out.push((format!("layer{}.bn.running_var", i + 1), &bn.running_var));
            }
        }
        out
    }

    pub fn update_buffers<R>(&mut self, f: impl FnOnce(Vec<(String, &mut FpTensor<T>)>) -> R) -> R {
        let mut refs = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            if let Some(bn) = &mut l.bn {
                refs.push((format!("layer{}.bn.running_mean", i + 1), &mut bn.running_mean));
                refs.push((format!("layer{}.bn.running_var", i + 1), &mut bn.running_var));
            }
        }
        f(refs)
    }

    pub fn max_abs_latent(&self) -> T {
        self.layers
            .iter()
            .fold(T::zero(), |m, l| m.max(l.w_latent.max_abs()))
    }
}

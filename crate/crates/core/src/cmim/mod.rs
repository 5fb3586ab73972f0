//! Contrastive mutual-information maximization between binary and
//! full-precision activations.
//!
//! For every tapped layer the binary activation of a sample is the anchor, its
//! own full-precision activation the positive, and `N` memory-bank embeddings
//! of other samples the negatives.

mod bank;
mod critic;
mod nce;

pub use bank::MemoryBank;
pub use critic::{critic_log_scores, l1_norm, log_critic, score, sigmoid, softplus, CriticParams};
pub use nce::{nce_layer_loss, ColdSlotPolicy, NceOutput, NegativeTable};

use rand::Rng;

use crate::error::{Error, Result};
pub use crate::net::pool_embedding;

use crate::net::{ActivationGrads, ForwardCache, LayerSpec, Network};
use crate::tensor::{FpTensor, Real};

/// ±1 anchors `sign(x)` as floats.
pub fn sign_anchors<T: Real>(x: &FpTensor<T>) -> FpTensor<T> {
    x.map(|v| if v >= T::zero() { T::one() } else { -T::one() })
}

/// Weight `1/β^(K−1−k)` of layer `k` (1-based) in a `K`-layer network.
pub fn layer_weight(k: usize, depth: usize, beta: f64) -> f64 {
    beta.powi(k as i32 + 1 - depth as i32)
}

/// `λ · Σ_k nce[k−1] / β^(K−1−k) + cls`, with `nce[k−1]` the loss of layer `k`.
pub fn cmim_total(nce_per_layer: &[f64], cls_loss: f64, lambda: f64, beta: f64, depth: usize) -> Result<f64> {
    if beta.is_nan() || beta <= 1.0 {
        return Err(Error::Config(format!("beta must exceed 1, got {beta}")));
    }
    if nce_per_layer.len() > depth {
        return Err(Error::Config(format!(
            "{} layer losses for a {depth}-layer network",
            nce_per_layer.len()
        )));
    }
    if lambda == 0.0 {
        return Ok(cls_loss);
    }
    let weighted: f64 = nce_per_layer
        .iter()
        .enumerate()
        .map(|(i, v)| v * layer_weight(i + 1, depth, beta))
        .sum();
    Ok(lambda * weighted + cls_loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmimLossReport {
    /// `(layer, nce loss, active anchors)` per tapped layer.
    pub nce: Vec<(usize, f64, usize)>,
    /// `Σ_k nce_k / β^(K−1−k)`.
    pub weighted_nce: f64,
    pub cls: f64,
    pub lambda: f64,
    pub total: f64,
}

impl CmimLossReport {
    /// NCE values laid out by layer, zero for untapped layers.
    pub fn nce_by_layer(&self, depth: usize) -> Vec<f64> {
        let mut v = vec![0.0; depth];
        for &(k, l, _) in &self.nce {
            v[k - 1] = l;
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CmimParams {
    pub lambda: f64,
    pub beta: f64,
    pub critic: CriticParams,
    pub cold_slots: ColdSlotPolicy,
    /// Read `critic.tau` per embedding dimension: a layer of width `D` uses `τ·D`.
    pub tau_per_dim: bool,
    /// Fix each layer's `ln Z` on its first contrastive batch to
    /// `ln(M · mean e^{s/τ})`, so a typical pair starts near `h = 1/(N+1)`.
    pub normalize: bool,
}

/// Memory banks plus hyperparameters for one network.
#[derive(Clone, Debug)]
pub struct Cmim<T: Real = f32> {
    params: CmimParams,
    critics: Vec<CriticParams>,
    calibrated: Vec<bool>,
    taps: Vec<usize>,
    banks: Vec<MemoryBank<T>>,
}

/// Embeddings of the current batch, kept until the banks are refreshed.
#[derive(Clone, Debug)]
pub struct BatchEmbeddings<T: Real = f32> {
    pub positives: Vec<FpTensor<T>>,
}

impl<T: Real> Cmim<T> {
    pub fn new(net: &Network<T>, slots: usize, params: CmimParams) -> Result<Self> {
        params.critic.validate()?;
        if params.beta.is_nan() || params.beta <= 1.0 {
            return Err(Error::Config(format!("beta must exceed 1, got {}", params.beta)));
        }
        if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", params.lambda)));
        }
        if params.critic.n_negatives + 1 > slots {
            return Err(Error::Config(format!(
                "n_nce = {} needs more than {slots} training samples",
                params.critic.n_negatives
            )));
        }
        let taps = net.tap_layers().to_vec();
        let banks = taps
            .iter()
            .map(|&k| MemoryBank::new(slots, net.layers()[k - 1].spec().out_channels()))
            .collect::<Vec<MemoryBank<T>>>();
        let critics = banks
            .iter()
            .map(|b| CriticParams {
                tau: if params.tau_per_dim { params.critic.tau * b.dim() as f64 } else { params.critic.tau },
                ..params.critic
            })
            .collect();
        let calibrated = vec![!params.normalize; taps.len()];
        Ok(Cmim {
            params,
            critics,
            calibrated,
            taps,
            banks,
        })
    }

    pub fn params(&self) -> &CmimParams {
        &self.params
    }

    /// Critic of each tapped layer, with its effective temperature and `ln Z`.
    pub fn critics(&self) -> &[CriticParams] {
        &self.critics
    }

    /// `ln Z` per tapped layer, `None` until fixed.
    pub fn log_norms(&self) -> Vec<Option<f64>> {
        self.critics
            .iter()
            .zip(&self.calibrated)
            .map(|(c, &done)| (done && self.params.normalize).then_some(c.log_norm))
            .collect()
    }

    pub fn set_log_norms(&mut self, values: &[Option<f64>]) -> Result<()> {
        if values.len() != self.critics.len() {
            return Err(Error::Config(format!("{} normalizers for {} tapped layers", values.len(), self.critics.len())));
        }
        for ((c, done), v) in self.critics.iter_mut().zip(&mut self.calibrated).zip(values) {
            if let Some(v) = v {
                c.log_norm = *v;
                *done = true;
            }
        }
        Ok(())
    }

    pub fn taps(&self) -> &[usize] {
        &self.taps
    }

    pub fn banks(&self) -> &[MemoryBank<T>] {
        &self.banks
    }

    pub fn banks_mut(&mut self) -> &mut [MemoryBank<T>] {
        &mut self.banks
    }

    /// Pooled positives of every tapped layer.
    pub fn embed(&self, net: &Network<T>, cache: &ForwardCache<T>) -> Result<BatchEmbeddings<T>> {
        let positives = self
            .taps
            .iter()
            .map(|&k| {
                let lc = cache
                    .layer(k)
                    .ok_or_else(|| Error::dimension("cmim", format!("cache lacks layer {k}")))?;
                pool_embedding(&lc.a_fp, net.layers()[k - 1].spec())
            })
            .collect::<Result<_>>()?;
        Ok(BatchEmbeddings { positives })
    }

    /// NCE terms of all tapped layers and their activation gradients, already
    /// scaled by `λ / β^(K−1−k)`.
    pub fn losses<R: Rng>(
        &mut self,
        net: &Network<T>,
        cache: &ForwardCache<T>,
        emb: &BatchEmbeddings<T>,
        indices: &[usize],
        cls_loss: f64,
        rng: &mut R,
    ) -> Result<(CmimLossReport, ActivationGrads<T>)> {
        let depth = net.depth();
        let mut taps = ActivationGrads::none(depth);
        let mut nce = Vec::with_capacity(self.taps.len());
        for (t, &k) in self.taps.iter().enumerate() {
            let positives = &emb.positives[t];
            let anchors = sign_anchors(positives);
            let table = NegativeTable::sample(indices, self.banks[t].slots(), self.params.critic.n_negatives, rng)?;
            let mut out = nce_layer_loss(&anchors, positives, &self.banks[t], &table, &self.critics[t], self.params.cold_slots)?;
            if !self.calibrated[t] && out.active > 0 {
                self.critics[t].log_norm = out.log_mean_exp + (self.critics[t].m_pairs as f64).ln();
                self.calibrated[t] = true;
                out = nce_layer_loss(&anchors, positives, &self.banks[t], &table, &self.critics[t], self.params.cold_slots)?;
            }
            nce.push((k, out.loss, out.active));
            if out.active == 0 {
                continue;
            }
            let scale = T::from_f64_lossy(self.params.lambda * layer_weight(k, depth, self.params.beta));
            let lc = cache.layer(k).expect("checked in embed");
            let spec = net.layers()[k - 1].spec();
            route_gradients(&mut taps, k, spec, &lc.a_fp, positives, &out, scale)?;
        }
        let by_layer = {
            let mut v = vec![0.0; depth];
            for &(k, l, _) in &nce {
                v[k - 1] = l;
            }
            v
        };
        let weighted_nce = cmim_total(&by_layer, 0.0, 1.0, self.params.beta, depth)?;
        let total = cmim_total(&by_layer, cls_loss, self.params.lambda, self.params.beta, depth)?;
        if !total.is_finite() {
            return Err(Error::numeric("cmim", "non-finite total loss"));
        }
        Ok((
            CmimLossReport {
                nce,
                weighted_nce,
                cls: cls_loss,
                lambda: self.params.lambda,
                total,
            },
            taps,
        ))
    }

    /// Writes the current batch embeddings into the banks.
    pub fn commit(&mut self, indices: &[usize], emb: &BatchEmbeddings<T>) -> Result<()> {
        for (bank, e) in self.banks.iter_mut().zip(&emb.positives) {
            bank.update(indices, e)?;
        }
        Ok(())
    }
}

/// Sends pooled-embedding gradients back onto layer `k`'s activations.
fn route_gradients<T: Real>(
    taps: &mut ActivationGrads<T>,
    k: usize,
    spec: &LayerSpec,
    a_fp: &FpTensor<T>,
    pooled: &FpTensor<T>,
    out: &NceOutput<T>,
    scale: T,
) -> Result<()> {
    let positions = spec.positions();
    if positions == 1 {
        taps.add_fp(k, out.grad_positive.scale(scale)?)?;
        taps.add_bin(k, out.grad_anchor.scale(scale)?)?;
        return Ok(());
    }
    // The conv anchor is sign(mean), so its STE window sits on the mean.
    let through_ste = crate::net::ste_backward(&out.grad_anchor, pooled)?;
    let g_pooled = out.grad_positive.add(&through_ste)?;
    let per_position = scale / T::from_usize(positions).expect("small count");
    let (b, c) = g_pooled.dims2()?;
    let mut g = Vec::with_capacity(a_fp.len());
    for i in 0..b {
        for ch in 0..c {
            let v = g_pooled.row(i)[ch] * per_position;
            g.extend(std::iter::repeat(v).take(positions));
        }
    }
    taps.add_fp(k, FpTensor::new(a_fp.shape().to_vec(), g)?)
}

/// Whether `<sign(x), x> == ‖x‖₁` holds bit-exactly for every row of every
/// tapped layer embedding.
pub fn sign_identity_holds<T: Real>(emb: &BatchEmbeddings<T>) -> bool {
    emb.positives.iter().all(|p| {
        let anchors = sign_anchors(p);
        (0..p.dims2().map(|d| d.0).unwrap_or(0)).all(|i| {
            matches!(score(anchors.row(i), p.row(i)), Ok(s) if s.to_bits() == l1_norm(p.row(i)).to_bits())
        })
    })
}

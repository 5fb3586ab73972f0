//! Per-layer NCE loss against memory-bank negatives.

use rand::seq::index;
use rand::Rng;

use crate::cmim::bank::MemoryBank;
use crate::cmim::critic::{log_critic, score, sigmoid, CriticParams};
use crate::error::{Error, Result};
use crate::tensor::{gemm, FpTensor, MatView, Real};

/// What to do with an anchor whose negatives include a never-written slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColdSlotPolicy {
    Error,
    /// The anchor contributes nothing to the loss or its gradients.
    SkipAnchor,
}

/// Negatives for a batch: one shared pool of `N + 1` distinct slots, from
/// which each anchor drops exactly one entry (its own slot when present,
/// otherwise the last). Every anchor therefore sees `N` distinct slots drawn
/// uniformly from all slots but its own.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeTable {
    pool: Vec<usize>,
    dropped: Vec<usize>,
}

impl NegativeTable {
    pub fn sample<R: Rng>(anchors: &[usize], slots: usize, n: usize, rng: &mut R) -> Result<Self> {
        if n == 0 || n + 1 > slots {
            return Err(Error::Config(format!(
                "n_nce = {n} needs at least {} memory-bank slots, have {slots}",
                n + 1
            )));
        }
        let pool = index::sample(rng, slots, n + 1).into_vec();
        let dropped = anchors
            .iter()
            .map(|a| pool.iter().position(|p| p == a).unwrap_or(n))
            .collect();
        Ok(NegativeTable { pool, dropped })
    }

    /// Explicit table; `dropped[i]` is the pool position anchor `i` skips.
    pub fn from_parts(pool: Vec<usize>, dropped: Vec<usize>) -> Result<Self> {
        if pool.len() < 2 || dropped.iter().any(|&d| d >= pool.len()) {
            return Err(Error::dimension("NegativeTable", "malformed pool or drop positions"));
        }
        Ok(NegativeTable { pool, dropped })
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn n_negatives(&self) -> usize {
        self.pool.len() - 1
    }

    pub fn anchors(&self) -> usize {
        self.dropped.len()
    }

    /// Slots used as negatives for anchor `i`.
    pub fn negatives(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let d = self.dropped[i];
        self.pool
            .iter()
            .enumerate()
            .filter(move |&(j, _)| j != d)
            .map(|(_, &s)| s)
    }
}

#[derive(Clone, Debug)]
pub struct NceOutput<T: Real = f32> {
    /// `(1/B) Σ_i [−log h(s_ii) − Σ_j log(1 − h(s_ij))]` over active anchors.
    pub loss: f64,
    /// ∂loss/∂positives.
    pub grad_positive: FpTensor<T>,
    /// ∂loss/∂anchors, to be routed through the STE.
    pub grad_anchor: FpTensor<T>,
    pub active: usize,
    /// `ln mean exp(s/τ)` over every scored pair of the active anchors.
    pub log_mean_exp: f64,
}

/// Negated NCE objective for one layer.
///
/// `anchors` holds the ±1 embeddings of the current batch, `positives` the
/// matching full-precision embeddings. Negatives come from `bank` via `table`
/// and are constants for differentiation.
pub fn nce_layer_loss<T: Real>(
    anchors: &FpTensor<T>,
    positives: &FpTensor<T>,
    bank: &MemoryBank<T>,
    table: &NegativeTable,
    p: &CriticParams,
    policy: ColdSlotPolicy,
) -> Result<NceOutput<T>> {
    let (b, d) = anchors.dims2()?;
    if positives.shape() != anchors.shape() || d != bank.dim() || table.anchors() != b {
        return Err(Error::dimension(
            "nce_layer_loss",
            format!(
                "anchors {:?}, positives {:?}, bank width {}, table for {} anchors",
                anchors.shape(),
                positives.shape(),
                bank.dim(),
                table.anchors()
            ),
        ));
    }
    if table.n_negatives() != p.n_negatives {
        return Err(Error::Config(format!(
            "negative table has {} entries per anchor, critic expects {}",
            table.n_negatives(),
            p.n_negatives
        )));
    }
    if let Some(&bad) = table.pool.iter().find(|&&s| s >= bank.slots()) {
        return Err(Error::Config(format!("negative slot {bad} outside {} slots", bank.slots())));
    }

    let cold: Vec<bool> = table.pool.iter().map(|&s| !bank.is_initialized(s)).collect();
    let mut active = vec![true; b];
    for (i, act) in active.iter_mut().enumerate() {
        let first_cold = (0..cold.len()).find(|&j| cold[j] && j != table.dropped[i]);
        if let Some(j) = first_cold {
            match policy {
                ColdSlotPolicy::Error => {
                    return Err(Error::BankNotWarm { slot: table.pool[j] });
                }
                ColdSlotPolicy::SkipAnchor => *act = false,
            }
        }
    }
    let n_active = active.iter().filter(|&&a| a).count();
    let mut grad_positive = FpTensor::zeros(&[b, d]);
    let mut grad_anchor = FpTensor::zeros(&[b, d]);
    if n_active == 0 {
        return Ok(NceOutput {
            loss: 0.0,
            grad_positive,
            grad_anchor,
            active: 0,
            log_mean_exp: 0.0,
        });
    }

    let np = table.pool.len();
    let mut pool_emb = vec![0.0f64; np * d];
    for (j, &slot) in table.pool.iter().enumerate() {
        if let Some(e) = bank.get(slot) {
            for (dst, v) in pool_emb[j * d..(j + 1) * d].iter_mut().zip(e) {
                *dst = v.as_f64();
            }
        }
    }
    let anchors64: Vec<f64> = anchors.data().iter().map(|v| v.as_f64()).collect();
    let scores = gemm(
        MatView::new(&anchors64, b, d)?,
        MatView::new(&pool_emb, np, d)?.t(),
    )?;

    let inv_b = 1.0 / b as f64;
    let mut total = 0.0f64;
    let mut g_scores = vec![0.0f64; b * np];
    let mut g_pos = vec![0.0f64; b];
    let mut scaled = Vec::with_capacity(n_active * np);
    for i in 0..b {
        if !active[i] {
            continue;
        }
        let s_pos = score(anchors.row(i), positives.row(i))?;
        let (log_h, _) = log_critic(s_pos, p);
        scaled.push(s_pos / p.tau);
        let mut term = -log_h;
        g_pos[i] = -sigmoid(-p.logit(s_pos)) / p.tau * inv_b;
        for j in 0..np {
            if j == table.dropped[i] {
                continue;
            }
            let s = scores[i * np + j];
            scaled.push(s / p.tau);
            let (_, log_1mh) = log_critic(s, p);
            term -= log_1mh;
            g_scores[i * np + j] = sigmoid(p.logit(s)) / p.tau * inv_b;
        }
        total += term;
    }
    let loss = total * inv_b;
    if !loss.is_finite() {
        return Err(Error::numeric("nce_layer_loss", "non-finite loss"));
    }

    let g_from_neg = gemm(MatView::new(&g_scores, b, np)?, MatView::new(&pool_emb, np, d)?)?;
    let gp = grad_positive.data_mut();
    let ga = grad_anchor.data_mut();
    for i in 0..b {
        if !active[i] {
            continue;
        }
        for c in 0..d {
            let idx = i * d + c;
            gp[idx] = T::from_f64_lossy(g_pos[i] * anchors.data()[idx].as_f64());
            ga[idx] = T::from_f64_lossy(g_pos[i] * positives.data()[idx].as_f64() + g_from_neg[idx]);
        }
    }
    let peak = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_mean_exp = peak + (scaled.iter().map(|v| (v - peak).exp()).sum::<f64>() / scaled.len() as f64).ln();
    Ok(NceOutput {
        loss,
        grad_positive,
        grad_anchor,
        active: n_active,
        log_mean_exp,
    })
}

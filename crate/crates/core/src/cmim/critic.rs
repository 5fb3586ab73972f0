//! Sign-structured critic `h(a_B, a_F) = e^{s/τ} / (e^{s/τ} + N/M)`, with
//! `s = <a_B, a_F>`.

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticParams {
    /// Temperature τ.
    pub tau: f64,
    /// Negatives per anchor, N.
    pub n_negatives: usize,
    /// Normalizing pair count, M.
    pub m_pairs: usize,
    /// `ln Z`, subtracted from the logit; 0 leaves the critic unnormalized.
    pub log_norm: f64,
}

impl CriticParams {
    pub fn new(tau: f64, n_negatives: usize, m_pairs: usize) -> Result<Self> {
        let p = CriticParams {
            tau,
            n_negatives,
            m_pairs,
            log_norm: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.n_negatives == 0 {
            return Err(Error::Config("n_nce must be at least 1".into()));
        }
        if self.m_pairs < self.n_negatives {
            return Err(Error::Config(format!(
                "M = {} is smaller than N = {}",
                self.m_pairs, self.n_negatives
            )));
        }
        Ok(())
    }

    /// `ln(N / M)`.
    pub fn log_ratio(&self) -> f64 {
        (self.n_negatives as f64).ln() - (self.m_pairs as f64).ln()
    }

    /// Logit of the critic: `s/τ − ln Z − ln(N/M)`.
    pub fn logit(&self, s: f64) -> f64 {
        s / self.tau - self.log_norm - self.log_ratio()
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(log h, log(1 − h))` for score `s`.
pub fn log_critic(s: f64, p: &CriticParams) -> (f64, f64) {
    let z = p.logit(s);
    (-softplus(-z), -softplus(z))
}

/// Inner product accumulated left to right in f64.
///
/// With `anchor = sign(a_F)` every term equals `|a_F[i]|` exactly, so the
/// result is bit-identical to [`l1_norm`] of `a_F`.
pub fn score<T: Real>(anchor: &[T], fp: &[T]) -> Result<f64> {
    if anchor.len() != fp.len() {
        return Err(Error::dimension(
            "critic score",
            format!("anchor has {} entries, activation {}", anchor.len(), fp.len()),
        ));
    }
    let mut acc = 0.0f64;
    for (a, f) in anchor.iter().zip(fp) {
        acc += (*a * *f).as_f64();
    }
    Ok(acc)
}

/// `‖x‖₁` accumulated in the same order as [`score`].
pub fn l1_norm<T: Real>(x: &[T]) -> f64 {
    let mut acc = 0.0f64;
    for v in x {
        acc += v.abs().as_f64();
    }
    acc
}

pub fn critic_log_scores<T: Real>(anchor: &[T], fp: &[T], p: &CriticParams) -> Result<(f64, f64)> {
    if let Some(bad) = anchor.iter().find(|a| a.abs() != T::one()) {
        return Err(Error::numeric("critic", format!("anchor entry {bad} is not ±1")));
    }
    Ok(log_critic(score(anchor, fp)?, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> CriticParams {
        CriticParams::new(1.0, 1, 1).unwrap()
    }

    #[test]
    fn worked_example_scores() {
        let fp_pos = [0.3f64, -0.4, -0.6];
        let anchor = [1.0f64, -1.0, -1.0];
        assert_eq!(score(&anchor, &fp_pos).unwrap(), l1_norm(&fp_pos));
        assert!((score(&anchor, &fp_pos).unwrap() - 1.3).abs() < 1e-15);
        let neg = [0.6f64, -0.9, 0.7];
        assert!((score(&anchor, &neg).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn symmetric_point() {
        let (lh, l1h) = log_critic(0.0, &unit());
        assert_eq!(lh, -std::f64::consts::LN_2);
        assert_eq!(l1h, -std::f64::consts::LN_2);
    }

    #[test]
    fn saturated_scores_stay_finite() {
        // ln(1 + e^-100) = 3.720075976020836e-44 to double precision.
        let (lh, l1h) = log_critic(100.0, &unit());
        assert!((lh + 3.720075976020836e-44).abs() < 1e-9);
        assert!((l1h + 100.0).abs() < 1e-9);
        let (lh, l1h) = log_critic(-1e6, &unit());
        assert!(lh.is_finite() && l1h.is_finite());
    }

    #[test]
    fn rejects_non_sign_anchor() {
        assert!(critic_log_scores(&[0.5f32, 1.0], &[1.0, 1.0], &unit()).is_err());
        assert!(critic_log_scores(&[1.0f32], &[1.0, 1.0], &unit()).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(CriticParams::new(0.0, 1, 1).is_err());
        assert!(CriticParams::new(0.1, 0, 1).is_err());
        assert!(CriticParams::new(0.1, 5, 4).is_err());
    }
}

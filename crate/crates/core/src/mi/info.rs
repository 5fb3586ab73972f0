use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{FpTensor, Real};

/// Joint counts over symbol pairs `(x, y)`, row-major in `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointHistogram {
    nx: usize,
    ny: usize,
    counts: Vec<f64>,
}

impl JointHistogram {
    pub fn new(nx: usize, ny: usize, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != nx * ny {
            return Err(Error::dimension(
                "JointHistogram",
                format!("{} counts for {nx}x{ny} symbols", counts.len()),
            ));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::numeric("JointHistogram", "counts must be finite and non-negative"));
        }
        Ok(JointHistogram { nx, ny, counts })
    }

    pub fn from_pairs(nx: usize, ny: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut counts = vec![0.0; nx * ny];
        for (x, y) in pairs {
            if x >= nx || y >= ny {
                return Err(Error::dimension("JointHistogram", format!("pair ({x}, {y}) outside {nx}x{ny}")));
            }
            counts[x * ny + y] += 1.0;
        }
        Ok(JointHistogram { nx, ny, counts })
    }

    pub fn symbols(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn count(&self, x: usize, y: usize) -> f64 {
        self.counts[x * self.ny + y]
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    fn probabilities(&self) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::numeric("mutual information", "empty histogram"));
        }
        let joint: Vec<f64> = self.counts.iter().map(|c| c / total).collect();
        let mut px = vec![0.0; self.nx];
        let mut py = vec![0.0; self.ny];
        for x in 0..self.nx {
            for y in 0..self.ny {
                px[x] += joint[x * self.ny + y];
                py[y] += joint[x * self.ny + y];
            }
        }
        Ok((joint, px, py))
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `I(X; Y)` in nats.
pub fn mutual_information(j: &JointHistogram) -> Result<f64> {
    let (joint, px, py) = j.probabilities()?;
    let mut mi = 0.0;
    for x in 0..j.nx {
        for y in 0..j.ny {
            let p = joint[x * j.ny + y];
            if p > 0.0 {
                mi += p * (p / (px[x] * py[y])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyDecomposition {
    pub h_x: f64,
    pub h_y: f64,
    pub mi: f64,
    pub h_x_given_y: f64,
}

/// `H(X)`, `H(Y)`, `I(X; Y)` and `H(X|Y) = H(X, Y) − H(Y)`, all in nats.
pub fn entropy_decomposition(j: &JointHistogram) -> Result<EntropyDecomposition> {
    let (joint, px, py) = j.probabilities()?;
    let h_y = entropy(&py);
    Ok(EntropyDecomposition {
        h_x: entropy(&px),
        h_y,
        mi: mutual_information(j)?,
        h_x_given_y: (entropy(&joint) - h_y).max(0.0),
    })
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundCheck {
    pub exact_mi: f64,
    /// Monte-Carlo estimate of `E[log q(D=1|x,y)] + log(N−1)`.
    pub bound: f64,
    pub std_error: f64,
    pub holds: bool,
}

/// Checks `I(X; Y) ≥ E_P[log q(D=1|x,y)] + log(N−1)` where
/// `q(D=1|x,y) = P(x,y) / (P(x,y) + P(x)P(y)(N−1))`, the expectation taken
/// over `samples` pairs drawn from the joint. The bound holds when the exact
/// value is at least the estimate minus three standard errors.
pub fn verify_nce_bound<R: Rng>(j: &JointHistogram, n_negatives: usize, samples: usize, rng: &mut R) -> Result<BoundCheck> {
    if n_negatives < 2 {
        return Err(Error::Config("the bound needs N >= 2".into()));
    }
    if samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    let (joint, px, py) = j.probabilities()?;
    if px.iter().chain(&py).any(|&p| p == 0.0) {
        return Err(Error::numeric("verify_nce_bound", "degenerate joint with an empty marginal"));
    }
    let exact_mi = mutual_information(j)?;
    let dist = WeightedIndex::new(&joint).map_err(|e| Error::numeric("verify_nce_bound", e.to_string()))?;
    let extra = (n_negatives - 1) as f64;
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let cell = dist.sample(rng);
        let (x, y) = (cell / j.ny, cell % j.ny);
        let p = joint[cell];
        let v = (p / (p + px[x] * py[y] * extra)).ln() + extra.ln();
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let bound = sum / n;
    let var = ((sum_sq - n * bound * bound) / (n - 1.0)).max(0.0);
    let std_error = (var / n).sqrt();
    Ok(BoundCheck {
        exact_mi,
        bound,
        std_error,
        holds: exact_mi >= bound - 3.0 * std_error,
    })
}

/// Equal-mass bin index of every value (ties share a bin).
fn quantile_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let edges: Vec<f64> = (1..bins).map(|b| sorted[(b * n / bins).min(n - 1)]).collect();
    values
        .iter()
        .map(|v| edges.iter().filter(|&&e| e <= *v).count())
        .collect()
}

/// Mean over units of `I(sign(a_F); bin(a_F))`, with `a_F` quantized into
/// `bins` equal-mass bins per unit. `a_fp` is `[batch × units]`.
pub fn binarized_activation_mi<T: Real>(a_fp: &FpTensor<T>, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
    }
    let (b, units) = a_fp.dims2()?;
    if b == 0 || units == 0 {
        return Err(Error::numeric("binarized_activation_mi", "empty activation"));
    }
    let mut total = 0.0;
    let mut column = vec![0.0f64; b];
    for u in 0..units {
        for (i, slot) in column.iter_mut().enumerate() {
            *slot = a_fp.data()[i * units + u].as_f64();
        }
        let binned = quantile_bins(&column, bins);
        let pairs = column
            .iter()
            .zip(&binned)
            .map(|(&v, &bin)| (usize::from(v >= 0.0), bin));
        total += mutual_information(&JointHistogram::from_pairs(2, bins, pairs)?)?;
    }
    Ok(total / units as f64)
}

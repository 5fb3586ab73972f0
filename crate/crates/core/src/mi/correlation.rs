use crate::error::{Error, Result};
use crate::tensor::{FpTensor, Real};

/// Pairwise cosine similarities with rows grouped by class label.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    /// Original row index of each sorted row.
    pub order: Vec<usize>,
    /// Label of each sorted row.
    pub labels: Vec<usize>,
    pub size: usize,
    /// Row-major `size × size` similarities.
    pub values: Vec<f64>,
    /// Start offsets of each class block, plus the final `size`.
    pub boundaries: Vec<usize>,
    /// Mean over off-diagonal same-class pairs (NaN without such pairs).
    pub intra_mean: f64,
    /// Mean over different-class pairs (NaN without such pairs).
    pub inter_mean: f64,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    /// `intra_mean − inter_mean`.
    pub fn gap(&self) -> f64 {
        self.intra_mean - self.inter_mean
    }
}

fn cosine(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn build(rows: Vec<Vec<f64>>, labels: &[usize]) -> CorrelationMatrix {
    let n = rows.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| labels[i]);
    let sorted_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut values = vec![0.0; n * n];
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for (a, &i) in order.iter().enumerate() {
        for (b, &j) in order.iter().enumerate().skip(a) {
            let c = if i == j && norms[i] > 0.0 {
                1.0
            } else {
                cosine(&rows[i], &rows[j], norms[i], norms[j])
            };
            values[a * n + b] = c;
            values[b * n + a] = c;
            if a != b {
                if labels[i] == labels[j] {
                    intra += c;
                    n_intra += 1;
                } else {
                    inter += c;
                    n_inter += 1;
                }
            }
        }
    }
    let mut boundaries = vec![0];
    for a in 1..n {
        if sorted_labels[a] != sorted_labels[a - 1] {
            boundaries.push(a);
        }
    }
    boundaries.push(n);
    CorrelationMatrix {
        order,
        labels: sorted_labels,
        size: n,
        values,
        boundaries,
        intra_mean: intra / n_intra as f64,
        inter_mean: inter / n_inter as f64,
    }
}

fn rows_of<T: Real>(emb: &FpTensor<T>, labels: &[usize]) -> Result<Vec<Vec<f64>>> {
    let (n, _) = emb.dims2()?;
    if labels.len() != n {
        return Err(Error::dimension(
            "correlation_matrix",
            format!("{} labels for {n} embeddings", labels.len()),
        ));
    }
    Ok((0..n).map(|i| emb.row(i).iter().map(|v| v.as_f64()).collect()).collect())
}

/// Per-sample cosine similarity matrix, rows sorted by label.
pub fn correlation_matrix<T: Real>(emb: &FpTensor<T>, labels: &[usize]) -> Result<CorrelationMatrix> {
    Ok(build(rows_of(emb, labels)?, labels))
}

/// Cosine similarity between class-mean embeddings, one row per present
/// class. Intra/inter means are taken from the per-sample matrix.
pub fn class_mean_correlation<T: Real>(emb: &FpTensor<T>, labels: &[usize]) -> Result<CorrelationMatrix> {
    let rows = rows_of(emb, labels)?;
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let d = rows.first().map_or(0, Vec::len);
    let means: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            (0..d)
                .map(|k| members.iter().map(|r| r[k]).sum::<f64>() / members.len() as f64)
                .collect()
        })
        .collect();
    let per_sample = build(rows, labels);
    let mut m = build(means, &classes);
    m.intra_mean = per_sample.intra_mean;
    m.inter_mean = per_sample.inter_mean;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_embeddings() {
        let e = FpTensor::<f32>::full(&[4, 3], 0.7);
        let m = correlation_matrix(&e, &[1, 0, 1, 0]).unwrap();
        assert!(m.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(m.boundaries, vec![0, 2, 4]);
    }

    #[test]
    fn one_hot_classes_give_block_identity() {
        let labels = [2, 0, 1, 0, 2];
        let e = FpTensor::<f64>::from_fn(&[5, 3], |i| if i % 3 == labels[i / 3] { 1.0 } else { 0.0 });
        let m = correlation_matrix(&e, &labels).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let want = if m.labels[a] == m.labels[b] { 1.0 } else { 0.0 };
                assert_eq!(m.get(a, b), want);
            }
        }
        assert_eq!((m.intra_mean, m.inter_mean), (1.0, 0.0));
        let cm = class_mean_correlation(&e, &labels).unwrap();
        assert_eq!(cm.size, 3);
        assert_eq!(cm.values, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_norm_rows_are_zero() {
        let e = FpTensor::<f32>::new(vec![2, 2], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let m = correlation_matrix(&e, &[0, 1]).unwrap();
        assert_eq!(m.values, vec![0.0, 0.0, 0.0, 1.0]);
    }
}

//! XNOR-popcount kernels for ±1 linear algebra.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::bits::{tail_mask, BitRow, BitTensor};
use crate::tensor::fp::{FpTensor, Real};

/// Dot product of two packed ±1 rows: `2 * popcount(xnor(a, b)) - n`.
pub fn xnor_dot(a: BitRow<'_>, b: BitRow<'_>) -> Result<i32> {
    if a.len != b.len {
        return Err(Error::dimension(
            "xnor_dot",
            format!("row lengths {} and {}", a.len, b.len),
        ));
    }
    Ok(xnor_dot_unchecked(a.words, b.words, a.len))
}

#[inline]
fn xnor_dot_unchecked(a: &[u64], b: &[u64], len: usize) -> i32 {
    let Some((last, full)) = a.split_last() else {
        return 0;
    };
    let (b_last, b_full) = b.split_last().expect("equal word counts");
    let mut matches: u32 = full
        .iter()
        .zip(b_full)
        .map(|(x, y)| (!(x ^ y)).count_ones())
        .sum();
    matches += (!(last ^ b_last) & tail_mask(len)).count_ones();
    2 * matches as i32 - len as i32
}

/// `a * w^T` where both operands are packed along the shared dimension:
/// `a` is `[p × n]`, `w` is `[m × n]`, the result `[p × m]`.
///
/// Each entry is an exact integer accumulated in `i32`, converted once.
pub fn xnor_matmul_nt<T: Real>(a: &BitTensor, w: &BitTensor) -> Result<FpTensor<T>> {
    let (&[p, n], &[m, n2]) = (a.shape(), w.shape()) else {
        return Err(Error::dimension(
            "xnor_matmul_nt",
            format!("expected 2-D operands, got {:?} and {:?}", a.shape(), w.shape()),
        ));
    };
    if n != n2 {
        return Err(Error::dimension(
            "xnor_matmul_nt",
            format!("[{p}x{n}] * [{m}x{n2}]^T"),
        ));
    }
    let mut out = vec![T::zero(); p * m];
    if m > 0 {
        out.par_chunks_mut(m).enumerate().for_each(|(i, row_out)| {
            let ai = a.row(i).words;
            for (j, slot) in row_out.iter_mut().enumerate() {
                let dot = xnor_dot_unchecked(ai, w.row(j).words, n);
                *slot = T::from_i32(dot).expect("i32 fits in float");
            }
        });
    }
    Ok(FpTensor::from_parts(vec![p, m], out))
}

/// Binary GEMM `w * a` with `w: [m × n]`, `a: [n × b]`, result `[m × b]`.
pub fn xnor_matmul<T: Real>(w: &BitTensor, a: &BitTensor) -> Result<FpTensor<T>> {
    let (&[_, n], &[n2, _]) = (w.shape(), a.shape()) else {
        return Err(Error::dimension(
            "xnor_matmul",
            format!("expected 2-D operands, got {:?} and {:?}", w.shape(), a.shape()),
        ));
    };
    if n != n2 {
        return Err(Error::dimension(
            "xnor_matmul",
            format!("inner dimensions {n} and {n2}"),
        ));
    }
    xnor_matmul_nt(w, &a.transpose()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::bits::sign_binarize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bits(rng: &mut ChaCha8Rng, shape: &[usize]) -> BitTensor {
        let n: usize = shape.iter().product();
        let signs: Vec<i8> = (0..n).map(|_| if rng.gen() { 1 } else { -1 }).collect();
        BitTensor::from_signs(shape, &signs).unwrap()
    }

    fn float_gemm(a: &FpTensor<f64>, b: &FpTensor<f64>) -> Vec<f64> {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn self_and_antipodal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 7, 63, 64, 65, 130] {
            let a = random_bits(&mut rng, &[1, n]);
            assert_eq!(xnor_dot(a.row(0), a.row(0)).unwrap(), n as i32);
            let neg = sign_binarize(&a.unpack::<f32>().scale(-1.0).unwrap());
            assert_eq!(xnor_dot(a.row(0), neg.row(0)).unwrap(), -(n as i32));
        }
    }

    #[test]
    fn antipodal_seven() {
        let a = BitTensor::from_signs(&[1, 7], &[1, -1, 1, 1, -1, -1, 1]).unwrap();
        let b = BitTensor::from_signs(&[1, 7], &[-1, 1, -1, -1, 1, 1, -1]).unwrap();
        assert_eq!(xnor_dot(a.row(0), b.row(0)).unwrap(), -7);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = BitTensor::negative_ones(&[1, 5]);
        let b = BitTensor::negative_ones(&[1, 6]);
        assert!(matches!(xnor_dot(a.row(0), b.row(0)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn exhaustive_length_six() {
        let n = 6;
        for x in 0u32..(1 << n) {
            for y in 0u32..(1 << n) {
                let sa: Vec<i8> = (0..n).map(|i| if x >> i & 1 == 1 { 1 } else { -1 }).collect();
                let sb: Vec<i8> = (0..n).map(|i| if y >> i & 1 == 1 { 1 } else { -1 }).collect();
                let want: i32 = sa.iter().zip(&sb).map(|(&p, &q)| (p * q) as i32).sum();
                let a = BitTensor::from_signs(&[1, n], &sa).unwrap();
                let b = BitTensor::from_signs(&[1, n], &sb).unwrap();
                assert_eq!(xnor_dot(a.row(0), b.row(0)).unwrap(), want);
            }
        }
    }

    #[test]
    fn matmul_matches_float_gemm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_bits(&mut rng, &[16, 32]);
        let a = random_bits(&mut rng, &[32, 4]);
        let got: FpTensor<f64> = xnor_matmul(&w, &a).unwrap();
        assert_eq!(got.shape(), &[16, 4]);
        assert_eq!(got.data(), float_gemm(&w.unpack(), &a.unpack()).as_slice());
    }

    #[test]
    fn degenerate_gemm_is_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_bits(&mut rng, &[1, 77]);
        let a = random_bits(&mut rng, &[77, 1]);
        let got: FpTensor<f32> = xnor_matmul(&w, &a).unwrap();
        let at = a.transpose().unwrap();
        assert_eq!(got.data()[0] as i32, xnor_dot(w.row(0), at.row(0)).unwrap());
    }

    #[test]
    fn matmul_dimension_error() {
        let w = BitTensor::negative_ones(&[2, 3]);
        let a = BitTensor::negative_ones(&[4, 2]);
        assert!(xnor_matmul::<f32>(&w, &a).is_err());
    }
}

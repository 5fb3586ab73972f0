//! Bit-packed ±1 tensors.
//!
//! Bit 1 encodes +1 and bit 0 encodes −1. Each row (the innermost dimension)
//! starts on a fresh `u64`, filled LSB-first; bits past the logical row length
//! are always zero.

use crate::error::{Error, Result};
use crate::tensor::fp::{FpTensor, Real};

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BitTensor {
    shape: Vec<usize>,
    row_len: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

/// One packed row of a [`BitTensor`].
#[derive(Clone, Copy, Debug)]
pub struct BitRow<'a> {
    pub(crate) words: &'a [u64],
    pub(crate) len: usize,
}

impl<'a> BitRow<'a> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &'a [u64] {
        self.words
    }
}

pub(crate) fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

/// Mask of the valid bits in the final word of a row of `len` elements.
pub(crate) fn tail_mask(len: usize) -> u64 {
    match len % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl BitTensor {
    /// All −1 tensor of the given shape.
    pub fn negative_ones(shape: &[usize]) -> Self {
        let row_len = shape.last().copied().unwrap_or(1);
        let rows = row_count(shape);
        let words_per_row = words_for(row_len);
        BitTensor {
            shape: shape.to_vec(),
            row_len,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    /// Builds from explicit signs; any value `>= 0` counts as +1.
    pub fn from_signs(shape: &[usize], signs: &[i8]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != signs.len() {
            return Err(Error::dimension(
                "BitTensor::from_signs",
                format!("shape {shape:?} vs {} signs", signs.len()),
            ));
        }
        let mut out = Self::negative_ones(shape);
        let row_len = out.row_len;
        for (i, &s) in signs.iter().enumerate() {
            if s >= 0 {
                out.set_bit(i / row_len.max(1), i % row_len.max(1));
            }
        }
        Ok(out)
    }

    fn set_bit(&mut self, row: usize, col: usize) {
        self.words[row * self.words_per_row + col / 64] |= 1u64 << (col % 64);
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        row_count(&self.shape)
    }

    pub fn row_len(&self) -> usize {
        self.row_len
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn row(&self, i: usize) -> BitRow<'_> {
        BitRow {
            words: &self.words[i * self.words_per_row..(i + 1) * self.words_per_row],
            len: self.row_len,
        }
    }

    /// `true` for +1.
    pub fn get(&self, row: usize, col: usize) -> bool {
        (self.words[row * self.words_per_row + col / 64] >> (col % 64)) & 1 == 1
    }

    pub fn sign(&self, row: usize, col: usize) -> i8 {
        if self.get(row, col) {
            1
        } else {
            -1
        }
    }

    /// Expands to a dense ±1 float tensor.
    pub fn unpack<T: Real>(&self) -> FpTensor<T> {
        let rows = self.rows();
        let mut data = Vec::with_capacity(rows * self.row_len);
        for r in 0..rows {
            for c in 0..self.row_len {
                data.push(if self.get(r, c) { T::one() } else { -T::one() });
            }
        }
        FpTensor::from_parts(self.shape.clone(), data)
    }

    /// Transpose of a 2-D bit tensor.
    pub fn transpose(&self) -> Result<Self> {
        let [r, c] = self.shape[..] else {
            return Err(Error::dimension(
                "BitTensor::transpose",
                format!("expected 2-D, got {:?}", self.shape),
            ));
        };
        let mut out = Self::negative_ones(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                if self.get(i, j) {
                    out.set_bit(j, i);
                }
            }
        }
        Ok(out)
    }

    /// Checks that no padding bit is set.
    pub fn padding_is_clear(&self) -> bool {
        if self.words_per_row == 0 {
            return true;
        }
        let mask = tail_mask(self.row_len);
        (0..self.rows()).all(|r| self.words[(r + 1) * self.words_per_row - 1] & !mask == 0)
    }
}

fn row_count(shape: &[usize]) -> usize {
    match shape.len() {
        0 => 1,
        n => shape[..n - 1].iter().product(),
    }
}

/// Packs the signs of `x`: +1 where `x >= 0` (so sign(0) = +1), −1 elsewhere.
pub fn sign_binarize<T: Real>(x: &FpTensor<T>) -> BitTensor {
    let mut out = BitTensor::negative_ones(x.shape());
    let row_len = out.row_len;
    if row_len == 0 {
        return out;
    }
    let wpr = out.words_per_row;
    for (r, row) in x.data().chunks(row_len).enumerate() {
        let words = &mut out.words[r * wpr..(r + 1) * wpr];
        for (w, chunk) in words.iter_mut().zip(row.chunks(64)) {
            let mut acc = 0u64;
            for (bit, &v) in chunk.iter().enumerate() {
                if v >= T::zero() {
                    acc |= 1u64 << bit;
                }
            }
            *w = acc;
        }
    }
    out
}

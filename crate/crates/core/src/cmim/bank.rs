use crate::error::{Error, Result};
use crate::tensor::{FpTensor, Real};

/// One pooled full-precision embedding per training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank<T: Real = f32> {
    dim: usize,
    data: Vec<T>,
    initialized: Vec<bool>,
}

impl<T: Real> MemoryBank<T> {
    pub fn new(slots: usize, dim: usize) -> Self {
        MemoryBank {
            dim,
            data: vec![T::zero(); slots * dim],
            initialized: vec![false; slots],
        }
    }

    pub fn from_parts(dim: usize, data: Vec<T>, initialized: Vec<bool>) -> Result<Self> {
        if data.len() != dim * initialized.len() {
            return Err(Error::dimension(
                "MemoryBank::from_parts",
                format!("{} values for {} slots of width {dim}", data.len(), initialized.len()),
            ));
        }
        Ok(MemoryBank {
            dim,
            data,
            initialized,
        })
    }

    pub fn slots(&self) -> usize {
        self.initialized.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn initialized(&self) -> &[bool] {
        &self.initialized
    }

    pub fn is_initialized(&self, slot: usize) -> bool {
        self.initialized.get(slot).copied().unwrap_or(false)
    }

    pub fn n_initialized(&self) -> usize {
        self.initialized.iter().filter(|&&f| f).count()
    }

    /// Stored embedding, or `None` for a cold or out-of-range slot.
    pub fn get(&self, slot: usize) -> Option<&[T]> {
        self.is_initialized(slot)
            .then(|| &self.data[slot * self.dim..(slot + 1) * self.dim])
    }

    /// Replaces the slots at `indices` with the rows of `embeddings`.
    pub fn update(&mut self, indices: &[usize], embeddings: &FpTensor<T>) -> Result<()> {
        let (rows, dim) = embeddings.dims2()?;
        if rows != indices.len() || dim != self.dim {
            return Err(Error::dimension(
                "bank_update",
                format!(
                    "{} indices and [{rows}x{dim}] embeddings for width {}",
                    indices.len(),
                    self.dim
                ),
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.slots()) {
            return Err(Error::dimension(
                "bank_update",
                format!("index {bad} outside {} slots", self.slots()),
            ));
        }
        for (r, &slot) in indices.iter().enumerate() {
            self.data[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(embeddings.row(r));
            self.initialized[slot] = true;
        }
        Ok(())
    }
}

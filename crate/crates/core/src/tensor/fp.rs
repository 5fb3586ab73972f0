//! Dense row-major float tensors.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Float element type used by [`FpTensor`].
///
/// Training runs in `f32`. `f64` exists so gradient plumbing can be checked
/// against finite differences without single-precision noise.
pub trait Real:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + Sum + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` on strided views; see [`matrixmultiply::sgemm`].
    ///
    /// # Safety
    /// Strides and extents must describe memory inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc);
    }

    fn from_f64_lossy(v: f64) -> f32 {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc);
    }

    fn from_f64_lossy(v: f64) -> f64 {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Borrowed 2-D view with explicit strides, used to express transposed GEMM
/// operands without copying.
#[derive(Clone, Copy)]
pub struct MatView<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a, T: Real> MatView<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dimension(
                "MatView::new",
                format!("{rows}x{cols} view over {} elements", data.len()),
            ));
        }
        Ok(MatView {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        })
    }

    pub fn t(self) -> Self {
        MatView {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// `a * b` for strided views, returned as a contiguous row-major buffer.
pub fn gemm<T: Real>(a: MatView<'_, T>, b: MatView<'_, T>) -> Result<Vec<T>> {
    if a.cols != b.rows {
        return Err(Error::dimension(
            "gemm",
            format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![T::zero(); m * n];
    if m == 0 || n == 0 {
        return Ok(out);
    }
    if k == 0 {
        return Ok(out);
    }
    // SAFETY: views were built by MatView::new (extent == len) and only
    // transposed afterwards, so every (i, j) maps inside the borrowed slice;
    // `out` is exactly m*n with row stride n.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(out)
}

/// Dense tensor of floats with an explicit shape, stored row-major.
#[derive(Clone, PartialEq)]
pub struct FpTensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Debug for FpTensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FpTensor")
            .field("dtype", &T::NAME)
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Real> FpTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dimension(
                "FpTensor::new",
                format!("shape {shape:?} needs {expected} elements, got {}", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                "FpTensor::new",
                format!("non-finite element at flat index {pos}"),
            ));
        }
        Ok(FpTensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        FpTensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        FpTensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        FpTensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        FpTensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::dimension(
                "dims2",
                format!("expected a 2-D tensor, got shape {other:?}"),
            )),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.shape.last().copied().unwrap_or(1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn view(&self) -> Result<MatView<'_, T>> {
        let (r, c) = self.dims2()?;
        MatView::new(&self.data, r, c)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dimension(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        Ok(FpTensor {
            shape,
            data: self.data,
        })
    }

    fn checked(self, op: &'static str) -> Result<Self> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(op, format!("non-finite result at flat index {pos}")));
        }
        Ok(self)
    }

    /// `self * rhs` for 2-D operands.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let a = self.view()?;
        let b = rhs.view()?;
        let out = gemm(a, b)?;
        FpTensor::from_parts(vec![a.rows(), b.cols()], out).checked("matmul")
    }

    /// `self * rhs^T`.
    pub fn matmul_nt(&self, rhs: &Self) -> Result<Self> {
        let a = self.view()?;
        let b = rhs.view()?.t();
        let out = gemm(a, b)?;
        FpTensor::from_parts(vec![a.rows(), b.cols()], out).checked("matmul_nt")
    }

    /// `self^T * rhs`.
    pub fn matmul_tn(&self, rhs: &Self) -> Result<Self> {
        let a = self.view()?.t();
        let b = rhs.view()?;
        let out = gemm(a, b)?;
        FpTensor::from_parts(vec![a.rows(), b.cols()], out).checked("matmul_tn")
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(FpTensor::from_parts(vec![c, r], out))
    }

    fn zip_with(&self, rhs: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != rhs.shape {
            return Err(Error::dimension(
                op,
                format!("{:?} vs {:?}", self.shape, rhs.shape),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        FpTensor::from_parts(self.shape.clone(), data).checked(op)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        self.zip_with(rhs, "mul", |a, b| a * b)
    }

    /// In-place `self += rhs`.
    pub fn add_assign(&mut self, rhs: &Self) -> Result<()> {
        if self.shape != rhs.shape {
            return Err(Error::dimension(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, rhs.shape),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: T) -> Result<Self> {
        self.map(|v| v * factor).checked("scale")
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        FpTensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> FpTensor<U> {
        FpTensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &FpTensor<f64>, b: &FpTensor<f64>) -> FpTensor<f64> {
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
        FpTensor::new(vec![m, n], out).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> FpTensor<f64> {
        FpTensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, &[3, 4]);
        let out = a.matmul(&FpTensor::eye(4)).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn transpose_of_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 2]);
        let lhs = a.matmul(&b).unwrap().transpose().unwrap();
        let rhs = b.transpose().unwrap().matmul(&a.transpose().unwrap()).unwrap();
        let oracle = naive(&a, &b).transpose().unwrap();
        for ((x, y), z) in lhs.data().iter().zip(rhs.data()).zip(oracle.data()) {
            assert!((x - z).abs() < 1e-12);
            assert!((y - z).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_variants_match_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, &[5, 3]);
        let b = random(&mut rng, &[4, 3]);
        let nt = a.matmul_nt(&b).unwrap();
        let oracle = naive(&a, &b.transpose().unwrap());
        for (x, y) in nt.data().iter().zip(oracle.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = random(&mut rng, &[5, 2]);
        let tn = a.matmul_tn(&c).unwrap();
        let oracle = naive(&a.transpose().unwrap(), &c);
        for (x, y) in tn.data().iter().zip(oracle.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_by_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(&mut rng, &[3, 3]);
        assert!(a.scale(0.0).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let a = FpTensor::<f32>::zeros(&[2, 3]);
        let b = FpTensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension { .. })));
        assert!(matches!(
            a.add(&FpTensor::zeros(&[3, 2])),
            Err(Error::Dimension { .. })
        ));
        assert!(FpTensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(matches!(
            FpTensor::<f32>::new(vec![1], vec![f32::NAN]),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn f32_gemm_matches_f64_on_integers() {
        let a = FpTensor::<f32>::from_fn(&[7, 9], |i| ((i * 7) % 5) as f32 - 2.0);
        let b = FpTensor::<f32>::from_fn(&[9, 4], |i| ((i * 3) % 7) as f32 - 3.0);
        let got = a.matmul(&b).unwrap();
        let want = naive(&a.cast(), &b.cast());
        assert_eq!(got.cast::<f64>(), want);
    }
}

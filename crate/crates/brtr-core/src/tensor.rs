//! Dense N-way tensor storage and elementary multilinear operations.
//!
//! All tensors are stored flat in first-index-fastest order (column-major in
//! matrix terms): the offset of 1-based index (i_1..i_N) is
//! `sum_n (i_n - 1) * prod_{m<n} I_m`. Every module in the crate inherits this
//! single linearization, which is exactly the standard `vec` operator, so the
//! identity `vec(B X A^T) = (A kron B) vec(X)` holds throughout.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Dimensions (I_1..I_N) of an N-way tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("shape must have at least one dim".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("all dims must be >= 1".into()));
        }
        let mut count: usize = 1;
        for &d in &dims {
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::InvalidArgument("element count overflows".into()))?;
        }
        Ok(Shape { dims })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Total element count.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// First-index-fastest strides: stride of mode n is prod_{m<n} I_m.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.dims.len());
        let mut acc = 1usize;
        for &d in &self.dims {
            s.push(acc);
            acc *= d;
        }
        s
    }

    /// Flat offset of a 0-based multi-index.
    pub fn offset(&self, idx0: &[usize]) -> usize {
        debug_assert_eq!(idx0.len(), self.dims.len());
        let mut off = 0;
        let mut stride = 1;
        for (i, &d) in idx0.iter().zip(&self.dims) {
            debug_assert!(*i < d);
            off += i * stride;
            stride *= d;
        }
        off
    }
}

/// 1-based multi-index (i_1..i_N), matching the mathematical surface.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    /// Validate against a shape and convert to 0-based indices.
    pub fn to_zero_based(&self, shape: &Shape) -> Result<Vec<usize>> {
        if self.0.len() != shape.ndim() {
            return Err(Error::IndexOutOfRange(format!(
                "index order {} does not match tensor order {}",
                self.0.len(),
                shape.ndim()
            )));
        }
        let mut out = Vec::with_capacity(self.0.len());
        for (&i, &d) in self.0.iter().zip(shape.dims()) {
            if i < 1 || i > d {
                return Err(Error::IndexOutOfRange(format!("index {i} outside 1..={d}")));
            }
            out.push(i - 1);
        }
        Ok(out)
    }
}

/// Dense N-way tensor of 64-bit reals, flat first-index-fastest storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match element count {}",
                data.len(),
                shape.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.len();
        DenseTensor { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let n = shape.len();
        DenseTensor { shape, data: vec![value; n] }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Entry at a 1-based multi-index.
    pub fn get(&self, idx: &MultiIndex) -> Result<f64> {
        let z = idx.to_zero_based(&self.shape)?;
        Ok(self.data[self.shape.offset(&z)])
    }

    pub fn set(&mut self, idx: &MultiIndex, value: f64) -> Result<()> {
        let z = idx.to_zero_based(&self.shape)?;
        let off = self.shape.offset(&z);
        self.data[off] = value;
        Ok(())
    }

    /// Reinterpret the flat data under a new shape with equal element count.
    pub fn reshape(&self, shape: Shape) -> Result<DenseTensor> {
        if shape.len() != self.shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "reshape element count {} != {}",
                shape.len(),
                self.shape.len()
            )));
        }
        Ok(DenseTensor { shape, data: self.data.clone() })
    }

    /// View an order-2 tensor as a matrix (column-major layouts coincide).
    pub fn as_matrix(&self) -> Result<DMatrix<f64>> {
        if self.shape.ndim() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "expected order-2 tensor, got order {}",
                self.shape.ndim()
            )));
        }
        let (r, c) = (self.shape.dims()[0], self.shape.dims()[1]);
        Ok(DMatrix::from_column_slice(r, c, &self.data))
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> DenseTensor {
        let shape = Shape::new(vec![m.nrows(), m.ncols()]).expect("matrix dims are positive");
        DenseTensor { shape, data: m.as_slice().to_vec() }
    }
}

/// Observation indicator with the same linearization as the paired tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMask {
    shape: Shape,
    bits: Vec<u8>,
}

impl IndexMask {
    pub fn new(shape: Shape, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask length {} does not match element count {}",
                bits.len(),
                shape.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("mask bits must be 0 or 1".into()));
        }
        Ok(IndexMask { shape, bits })
    }

    pub fn full(shape: Shape) -> Self {
        let n = shape.len();
        IndexMask { shape, bits: vec![1; n] }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [u8] {
        &mut self.bits
    }

    /// Number of observed entries |O|.
    pub fn observed_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn reshape(&self, shape: Shape) -> Result<IndexMask> {
        if shape.len() != self.shape.len() {
            return Err(Error::ShapeMismatch("reshape element count mismatch".into()));
        }
        Ok(IndexMask { shape, bits: self.bits.clone() })
    }
}

/// vec(t): the flat data in first-index-fastest order.
pub fn vectorize(t: &DenseTensor) -> Vec<f64> {
    t.data().to_vec()
}

/// Entrywise (Hadamard) product of equally shaped tensors.
pub fn hadamard(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch("hadamard operands differ in shape".into()));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    DenseTensor::new(a.shape().clone(), data)
}

/// Kronecker product of two matrices; block (i,j) equals a[i,j]*b.
///
/// Layout is consistent with vec(B X A^T) = (A kron B) vec(X) under the
/// crate-wide column-major vec.
pub fn kronecker(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let am = a.as_matrix()?;
    let bm = b.as_matrix()?;
    Ok(DenseTensor::from_matrix(&am.kronecker(&bm)))
}

/// Frobenius norm: sqrt of sum of squared entries.
pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.data().iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Trace of a square matrix.
pub fn trace(m: &DenseTensor) -> Result<f64> {
    let mm = m.as_matrix()?;
    if mm.nrows() != mm.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "trace requires a square matrix, got {}x{}",
            mm.nrows(),
            mm.ncols()
        )));
    }
    Ok(mm.trace())
}

/// Circular dimensional permutation: shape becomes (I_{n+1}..I_N, I_1..I_n)
/// with entry (i_{n+1}..i_N, i_1..i_n) = t(i_1..i_N). n = 0 and n = N are the
/// identity.
pub fn circular_permute(t: &DenseTensor, n: usize) -> Result<DenseTensor> {
    let order = t.shape().ndim();
    if n > order {
        return Err(Error::IndexOutOfRange(format!(
            "permutation shift {n} outside 0..={order}"
        )));
    }
    if n == 0 || n == order {
        return Ok(t.clone());
    }
    let dims = t.shape().dims();
    let mut new_dims = Vec::with_capacity(order);
    new_dims.extend_from_slice(&dims[n..]);
    new_dims.extend_from_slice(&dims[..n]);
    let new_shape = Shape::new(new_dims)?;
    let src_strides = t.shape().strides();
    // Stride of output position k in the source: output mode k is source
    // mode (k + n) mod order.
    let perm_strides: Vec<usize> = (0..order).map(|k| src_strides[(k + n) % order]).collect();
    let out_dims = new_shape.dims().to_vec();
    let mut data = vec![0.0; t.data().len()];
    let mut idx = vec![0usize; order];
    let mut src_off = 0usize;
    for slot in data.iter_mut() {
        *slot = t.data()[src_off];
        // Odometer increment over the output index, first index fastest.
        for k in 0..order {
            idx[k] += 1;
            src_off += perm_strides[k];
            if idx[k] < out_dims[k] {
                break;
            }
            src_off -= idx[k] * perm_strides[k];
            idx[k] = 0;
        }
    }
    DenseTensor::new(new_shape, data)
}

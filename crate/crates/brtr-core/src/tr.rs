//! Tensor-ring algebra: cores, entrywise and full reconstruction, the tensor
//! connection product (TCP), and the subchain structures consumed by the
//! inference updates.

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, MultiIndex, Shape};
use nalgebra::DMatrix;

/// TR rank vector (R_0, R_1, .., R_N) with ring closure R_0 = R_N.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TRRank {
    ranks: Vec<usize>,
}

impl TRRank {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        if ranks.len() < 2 {
            return Err(Error::InvalidArgument("rank vector needs at least R_0 and R_1".into()));
        }
        if ranks.iter().any(|&r| r == 0) {
            return Err(Error::InvalidArgument("all ranks must be >= 1".into()));
        }
        if ranks[0] != ranks[ranks.len() - 1] {
            return Err(Error::InvalidArgument(format!(
                "ring closure requires R_0 = R_N, got {} and {}",
                ranks[0],
                ranks[ranks.len() - 1]
            )));
        }
        Ok(TRRank { ranks })
    }

    /// Uniform rank r over an N-mode ring.
    pub fn uniform(n_modes: usize, r: usize) -> Result<Self> {
        TRRank::new(vec![r; n_modes + 1])
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn n_modes(&self) -> usize {
        self.ranks.len() - 1
    }
}

/// Sequence of N order-3 cores; core n has shape R_{n-1} x I_n x R_n.
#[derive(Debug, Clone, PartialEq)]
pub struct TRCores {
    cores: Vec<DenseTensor>,
}

impl TRCores {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidArgument("at least one core required".into()));
        }
        for (k, c) in cores.iter().enumerate() {
            if c.shape().ndim() != 3 {
                return Err(Error::ShapeMismatch(format!(
                    "core {} must be order-3, got order {}",
                    k + 1,
                    c.shape().ndim()
                )));
            }
        }
        let n = cores.len();
        for k in 0..n {
            let next = (k + 1) % n;
            let r_out = cores[k].shape().dims()[2];
            let r_in = cores[next].shape().dims()[0];
            if r_out != r_in {
                return Err(Error::ShapeMismatch(format!(
                    "rank chain broken between core {} (R={}) and core {} (R={})",
                    k + 1,
                    r_out,
                    next + 1,
                    r_in
                )));
            }
        }
        Ok(TRCores { cores })
    }

    pub fn n_modes(&self) -> usize {
        self.cores.len()
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<DenseTensor> {
        self.cores
    }

    pub fn core(&self, k: usize) -> &DenseTensor {
        &self.cores[k]
    }

    /// Mode sizes (I_1..I_N).
    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape().dims()[1]).collect()
    }

    pub fn tr_rank(&self) -> TRRank {
        let mut ranks: Vec<usize> = self.cores.iter().map(|c| c.shape().dims()[0]).collect();
        ranks.push(self.cores[0].shape().dims()[0]);
        TRRank { ranks }
    }

    /// Lateral slice Z_n(i_n) as an R_{n-1} x R_n matrix (k, i 0-based).
    pub fn lateral_slice(&self, k: usize, i: usize) -> DMatrix<f64> {
        lateral_slice(&self.cores[k], i)
    }

    /// Rotate the core list left by n (Theorem 1 companion).
    pub fn rotate_left(&self, n: usize) -> TRCores {
        let len = self.cores.len();
        let mut cores = Vec::with_capacity(len);
        for k in 0..len {
            cores.push(self.cores[(k + n) % len].clone());
        }
        TRCores { cores }
    }
}

/// Lateral slice (:, i, :) of an order-3 tensor as a matrix, i 0-based.
pub fn lateral_slice(core: &DenseTensor, i: usize) -> DMatrix<f64> {
    let d = core.shape().dims();
    let (r0, im, r1) = (d[0], d[1], d[2]);
    debug_assert!(i < im);
    let data = core.data();
    DMatrix::from_fn(r0, r1, |a, b| data[a + r0 * (i + im * b)])
}

/// Single entry of the TR tensor: Tr(Z_1(i_1) Z_2(i_2) .. Z_N(i_N)).
pub fn tr_entry(cores: &TRCores, idx: &MultiIndex) -> Result<f64> {
    let dims = cores.dims();
    let shape = Shape::new(dims)?;
    let idx0 = idx.to_zero_based(&shape)?;
    let mut acc = cores.lateral_slice(0, idx0[0]);
    for (k, &i) in idx0.iter().enumerate().skip(1) {
        acc *= cores.lateral_slice(k, i);
    }
    Ok(acc.trace())
}

/// Tensor connection product of a chain of order-3 tensors.
///
/// The result has shape R_0 x (I_1 I_2 .. I_K) x R_K with the merged middle
/// index linearized first-index-fastest over (i_1..i_K); its lateral slice at
/// a merged index is the matrix product Z_1(i_1) .. Z_K(i_K).
pub fn tcp(chain: &[DenseTensor]) -> Result<DenseTensor> {
    if chain.is_empty() {
        return Err(Error::InvalidArgument("tcp of an empty chain".into()));
    }
    for c in chain {
        if c.shape().ndim() != 3 {
            return Err(Error::ShapeMismatch("tcp operands must be order-3".into()));
        }
    }
    for w in chain.windows(2) {
        if w[0].shape().dims()[2] != w[1].shape().dims()[0] {
            return Err(Error::ShapeMismatch(format!(
                "tcp chain broken: {} does not match {}",
                w[0].shape().dims()[2],
                w[1].shape().dims()[0]
            )));
        }
    }
    let r0 = chain[0].shape().dims()[0];
    // Accumulator kept as an (R_0 * J) x R_k matrix over the merged index J.
    let mut acc: DMatrix<f64> = {
        let d = chain[0].shape().dims();
        DMatrix::from_column_slice(r0 * d[1], d[2], chain[0].data())
    };
    let mut merged = chain[0].shape().dims()[1];
    for c in &chain[1..] {
        let d = c.shape().dims();
        let (r_prev, im, r_next) = (d[0], d[1], d[2]);
        debug_assert_eq!(acc.ncols(), r_prev);
        let rows = acc.nrows(); // R_0 * J
        let mut next = DMatrix::zeros(rows * im, r_next);
        for i in 0..im {
            let slice = lateral_slice(c, i);
            let prod = &acc * &slice; // rows x r_next
            for b in 0..r_next {
                let src = prod.column(b);
                let mut dst = next.view_mut((i * rows, b), (rows, 1));
                dst.copy_from(&src);
            }
        }
        // next is laid out as [R_0, J, I_m, r_next] which matches the merged
        // first-index-fastest order (previous merged index fastest).
        acc = next;
        merged *= im;
    }
    let r_last = acc.ncols();
    let shape = Shape::new(vec![r0, merged, r_last])?;
    DenseTensor::new(shape, acc.as_slice().to_vec())
}

/// Full reconstruction of the TR tensor via a running TCP accumulator.
pub fn tr_full(cores: &TRCores) -> Result<DenseTensor> {
    let merged = tcp(cores.cores())?;
    let d = merged.shape().dims();
    let (r0, total) = (d[0], d[1]);
    debug_assert_eq!(r0, d[2]);
    let data = merged.data();
    let mut out = vec![0.0; total];
    for (j, slot) in out.iter_mut().enumerate() {
        let mut tr = 0.0;
        for a in 0..r0 {
            tr += data[a + r0 * (j + total * a)];
        }
        *slot = tr;
    }
    DenseTensor::new(Shape::new(cores.dims())?, out)
}

/// Subchain Z^{(\n)}: TCP over all cores except core n, in ring order
/// (n+1, .., N, 1, .., n-1). n is 1-based; shape R_n x (..) x R_{n-1}.
pub fn subchain_except(cores: &TRCores, n: usize) -> Result<DenseTensor> {
    let nm = cores.n_modes();
    if n < 1 || n > nm {
        return Err(Error::IndexOutOfRange(format!("mode {n} outside 1..={nm}")));
    }
    if nm == 1 {
        // Empty chain degenerates to identity slices over a length-1 merged
        // index: R_0 x 1 x R_0 identity.
        let r = cores.core(0).shape().dims()[0];
        let mut t = DenseTensor::zeros(Shape::new(vec![r, 1, r])?);
        for a in 0..r {
            t.data_mut()[a + r * a] = 1.0;
        }
        return Ok(t);
    }
    let order: Vec<usize> = (0..nm - 1).map(|k| (n + k) % nm).collect();
    let chain: Vec<DenseTensor> = order.iter().map(|&k| cores.core(k).clone()).collect();
    tcp(&chain)
}

/// Design row for core n at a full multi-index: vec(Q^T) where
/// Q = Z_{n+1}(i_{n+1}) .. Z_N(i_N) Z_1(i_1) .. Z_{n-1}(i_{n-1}).
///
/// Satisfies tr_entry(cores, idx) = <design_row, vec(Z_n(i_n))>. n is 1-based.
pub fn design_row(cores: &TRCores, n: usize, idx: &MultiIndex) -> Result<Vec<f64>> {
    let nm = cores.n_modes();
    if n < 1 || n > nm {
        return Err(Error::IndexOutOfRange(format!("mode {n} outside 1..={nm}")));
    }
    let shape = Shape::new(cores.dims())?;
    let idx0 = idx.to_zero_based(&shape)?;
    let ranks = cores.tr_rank();
    let r_n = ranks.ranks()[n];
    let mut q = DMatrix::identity(r_n, r_n);
    for k in 0..nm - 1 {
        let m = (n + k) % nm;
        q *= cores.lateral_slice(m, idx0[m]);
    }
    // q is R_n x R_{n-1}; vec(Q^T) entry (a, b) = Q[b, a], a fastest.
    let r_prev = q.ncols();
    let mut row = Vec::with_capacity(r_prev * r_n);
    for b in 0..r_n {
        for a in 0..r_prev {
            row.push(q[(b, a)]);
        }
    }
    Ok(row)
}

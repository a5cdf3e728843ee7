//! Expected design-row moments for the core updates.
//!
//! The design row for core n at a full index is vec(Q^T) with
//! Q = Z_{n+1}(i_{n+1}) .. Z_{n-1}(i_{n-1}). Under the mean-field posterior the
//! cores are independent, so E[Q kron Q] is the ordered product of per-slice
//! factors E[Z kron Z] = E[Z] kron E[Z] + covariance contributions; permuting
//! indices then yields E[vec(Q^T) vec(Q^T)^T]. Plugin mode replaces the second
//! moment by the outer product of the mean row.

use super::{CorePosterior, MomentMode, PosteriorState};
use crate::error::{Error, Result};
use crate::tensor::{IndexMask, MultiIndex};
use nalgebra::{DMatrix, DVector};

/// E[Z(i) kron Z(i)] for one lateral slice: size (R_{n-1})^2 x (R_n)^2 in the
/// Kronecker layout, built from the slice mean and covariance.
pub(crate) fn slice_kron_moment(core: &CorePosterior, i: usize) -> DMatrix<f64> {
    let r0 = core.r_prev();
    let r1 = core.r_next();
    let m = core.slice_mean_mat(i);
    let v = &core.slice_cov[i];
    let mut out = DMatrix::zeros(r0 * r0, r1 * r1);
    for j in 0..r1 {
        for l in 0..r1 {
            for i1 in 0..r0 {
                for k in 0..r0 {
                    // E[Z_{i1 j} Z_{k l}] = m m + Cov[vec positions]
                    out[(i1 * r0 + k, j * r1 + l)] =
                        m[(i1, j)] * m[(k, l)] + v[(i1 + r0 * j, k + r0 * l)];
                }
            }
        }
    }
    out
}

/// Mean design row vec(Qbar^T) from a mean chain product Qbar (R_n x R_{n-1}).
pub(crate) fn row_from_mean_chain(qbar: &DMatrix<f64>) -> DVector<f64> {
    let r_prev = qbar.ncols();
    let r_n = qbar.nrows();
    DVector::from_fn(r_prev * r_n, |p, _| {
        let a = p % r_prev;
        let b = p / r_prev;
        qbar[(b, a)]
    })
}

/// Permute E[Q kron Q] (R_n^2 x R_{n-1}^2) into E[vec(Q^T) vec(Q^T)^T]
/// ((R_{n-1} R_n)^2, vec layout of the core slice).
pub(crate) fn kron_to_row_moment(p: &DMatrix<f64>, r_prev: usize, r_n: usize) -> DMatrix<f64> {
    let d = r_prev * r_n;
    DMatrix::from_fn(d, d, |pq, qq| {
        let (a, b) = (pq % r_prev, pq / r_prev);
        let (c, dd) = (qq % r_prev, qq / r_prev);
        p[(b * r_n + dd, a * r_prev + c)]
    })
}

/// Subchain mode order for core n (1-based): modes n+1, .., N, 1, .., n-1 as
/// 0-based indices.
pub(crate) fn subchain_order(n: usize, n_modes: usize) -> Vec<usize> {
    (0..n_modes - 1).map(|k| (n + k) % n_modes).collect()
}

/// Expected design-row mean and second moment for core n at one observed
/// index. n is 1-based.
pub fn expected_design_moments(
    state: &PosteriorState,
    n: usize,
    idx: &MultiIndex,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let nm = state.n_modes();
    if n < 1 || n > nm {
        return Err(Error::IndexOutOfRange(format!("mode {n} outside 1..={nm}")));
    }
    let shape = state.data_shape()?;
    let idx0 = idx.to_zero_based(&shape)?;
    let r_n = state.ranks.ranks()[n];
    let r_prev = state.ranks.ranks()[n - 1];
    let order = subchain_order(n, nm);

    let mut qbar = DMatrix::identity(r_n, r_n);
    for &m in &order {
        qbar *= state.cores[m].slice_mean_mat(idx0[m]);
    }
    let row = row_from_mean_chain(&qbar);

    let second = match state.moment_mode {
        MomentMode::Plugin => &row * row.transpose(),
        MomentMode::Exact => {
            let mut p = DMatrix::identity(r_n * r_n, r_n * r_n);
            for &m in &order {
                p *= slice_kron_moment(&state.cores[m], idx0[m]);
            }
            kron_to_row_moment(&p, r_prev, r_n)
        }
    };
    Ok((row, second))
}

/// Per-slice accumulated design moments for core n over the observed support.
pub(crate) struct SliceSums {
    /// Sum over observed entries of E[row row^T], in vec layout of the slice.
    pub quad: DMatrix<f64>,
    /// Sum over observed entries of residual * E[row].
    pub lin: DVector<f64>,
    /// Observed entries touching the slice.
    pub count: usize,
}

/// Accumulate, for every lateral slice of core n, the sums the Gaussian core
/// update needs: sum of expected second moments and the residual-weighted
/// mean rows. `residual` holds y - E[S] (or whatever the caller wants paired
/// with the rows) over the full flat tensor.
///
/// Walks the complementary index space depth-first in subchain order so the
/// chain products are shared across all entries with a common prefix; the
/// traversal order is fixed, so reductions are deterministic.
pub(crate) fn accumulate_slice_sums(
    state: &PosteriorState,
    residual: &[f64],
    mask: &IndexMask,
    n: usize,
) -> Result<Vec<SliceSums>> {
    let nm = state.n_modes();
    debug_assert!(n >= 1 && n <= nm);
    let dims = state.dims();
    let shape = state.data_shape()?;
    let strides = shape.strides();
    let n0 = n - 1;
    let order = subchain_order(n, nm);
    let r_n = state.ranks.ranks()[n];
    let r_prev = state.ranks.ranks()[n - 1];
    let d = r_prev * r_n;
    let exact = state.moment_mode == MomentMode::Exact;

    // Pre-gather per-mode slice means (and Kronecker moments in exact mode).
    let mean_slices: Vec<Vec<DMatrix<f64>>> = order
        .iter()
        .map(|&m| (0..dims[m]).map(|i| state.cores[m].slice_mean_mat(i)).collect())
        .collect();
    let kron_moms: Vec<Vec<DMatrix<f64>>> = if exact {
        order
            .iter()
            .map(|&m| (0..dims[m]).map(|i| slice_kron_moment(&state.cores[m], i)).collect())
            .collect()
    } else {
        Vec::new()
    };

    // Exact-mode accumulators live in the Q kron Q layout (R_n^2 x R_{n-1}^2)
    // and are permuted once at the end; plugin mode accumulates directly in
    // the vec layout.
    let quad_rows = if exact { r_n * r_n } else { d };
    let quad_cols = if exact { r_prev * r_prev } else { d };
    let mut sums: Vec<SliceSums> = (0..dims[n0])
        .map(|_| SliceSums {
            quad: DMatrix::zeros(quad_rows, quad_cols),
            lin: DVector::zeros(d),
            count: 0,
        })
        .collect();

    struct Walk<'a> {
        order: &'a [usize],
        dims: &'a [usize],
        strides: &'a [usize],
        mean_slices: &'a [Vec<DMatrix<f64>>],
        kron_moms: &'a [Vec<DMatrix<f64>>],
        residual: &'a [f64],
        mask: &'a [u8],
        n0: usize,
        exact: bool,
        sums: &'a mut Vec<SliceSums>,
    }

    impl Walk<'_> {
        fn go(&mut self, depth: usize, offset: usize, qbar: &DMatrix<f64>, p: &DMatrix<f64>) {
            if depth == self.order.len() {
                let stride_n = self.strides[self.n0];
                let row = row_from_mean_chain(qbar);
                for (i_n, sum) in self.sums.iter_mut().enumerate() {
                    let off = offset + i_n * stride_n;
                    if self.mask[off] == 0 {
                        continue;
                    }
                    sum.count += 1;
                    let resid = self.residual[off];
                    sum.lin.axpy(resid, &row, 1.0);
                    if self.exact {
                        sum.quad += p;
                    } else {
                        sum.quad.ger(1.0, &row, &row, 1.0);
                    }
                }
                return;
            }
            let m = self.order[depth];
            for i in 0..self.dims[m] {
                let q2 = qbar * &self.mean_slices[depth][i];
                let off = offset + i * self.strides[m];
                if self.exact {
                    let p2 = p * &self.kron_moms[depth][i];
                    self.go(depth + 1, off, &q2, &p2);
                } else {
                    self.go(depth + 1, off, &q2, p);
                }
            }
        }
    }

    let qbar0 = DMatrix::identity(r_n, r_n);
    let p0 = if exact {
        DMatrix::identity(r_n * r_n, r_n * r_n)
    } else {
        DMatrix::zeros(0, 0)
    };
    Walk {
        order: &order,
        dims: &dims,
        strides: &strides,
        mean_slices: &mean_slices,
        kron_moms: &kron_moms,
        residual,
        mask: mask.bits(),
        n0,
        exact,
        sums: &mut sums,
    }
    .go(0, 0, &qbar0, &p0);

    if exact {
        for sum in &mut sums {
            let permuted = kron_to_row_moment(&sum.quad, r_prev, r_n);
            // Symmetrize against accumulated rounding.
            sum.quad = (&permuted + permuted.transpose()) * 0.5;
        }
    } else {
        for sum in &mut sums {
            let symm = (&sum.quad + sum.quad.transpose()) * 0.5;
            sum.quad = symm;
        }
    }
    Ok(sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::testutil::random_state;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_covariance_makes_exact_equal_plugin() {
        let dims = [3, 2, 3];
        let ranks = [2, 2, 2, 2];
        let exact = random_state(&dims, &ranks, 0.0, 5, MomentMode::Exact);
        let mut plugin = exact.clone();
        plugin.moment_mode = MomentMode::Plugin;
        let idx = MultiIndex(vec![2, 1, 3]);
        for n in 1..=3 {
            let (re, me) = expected_design_moments(&exact, n, &idx).unwrap();
            let (rp, mp) = expected_design_moments(&plugin, n, &idx).unwrap();
            assert!((&re - &rp).norm() < 1e-14);
            assert!((&me - &mp).norm() < 1e-12);
        }
    }

    #[test]
    fn scalar_chain_second_moment() {
        // rank all-1 cores: second moment = prod(mu^2 + v), mean = prod(mu)
        let dims = [2, 2, 2];
        let mut state = random_state(&dims, &[1, 1, 1, 1], 0.0, 7, MomentMode::Exact);
        let vars = [0.3, 0.7, 0.2];
        for (k, &v) in vars.iter().enumerate() {
            for c in &mut state.cores[k].slice_cov {
                *c = DMatrix::from_element(1, 1, v);
            }
        }
        let idx = MultiIndex(vec![1, 2, 1]);
        let (row, second) = expected_design_moments(&state, 1, &idx).unwrap();
        // subchain for n=1 covers cores 2 and 3
        let mu2 = state.cores[1].mean.get(&MultiIndex(vec![1, 2, 1])).unwrap();
        let mu3 = state.cores[2].mean.get(&MultiIndex(vec![1, 1, 1])).unwrap();
        assert!((row[0] - mu2 * mu3).abs() < 1e-14);
        let expect = (mu2 * mu2 + vars[1]) * (mu3 * mu3 + vars[2]);
        assert!((second[(0, 0)] - expect).abs() < 1e-14);
    }

    #[test]
    fn design_row_mean_matches_tr_design_row() {
        let dims = [2, 3, 2];
        let state = random_state(&dims, &[2, 2, 2, 2], 0.1, 9, MomentMode::Exact);
        let cores = state.mean_cores().unwrap();
        let idx = MultiIndex(vec![2, 3, 1]);
        for n in 1..=3 {
            let (row, _) = expected_design_moments(&state, n, &idx).unwrap();
            let direct = crate::tr::design_row(&cores, n, &idx).unwrap();
            for (a, b) in row.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn monte_carlo_oracle_rank2() {
        // exact-mode second moment vs simulation from the slice posteriors
        let dims = [2, 2, 2];
        let state = random_state(&dims, &[2, 2, 2, 2], 0.05, 11, MomentMode::Exact);
        let n = 1usize;
        let idx = MultiIndex(vec![1, 2, 2]);
        let (_, second) = expected_design_moments(&state, n, &idx).unwrap();

        let order = subchain_order(n, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let samples = 200_000;
        let d = second.nrows();
        let mut mc: DMatrix<f64> = DMatrix::zeros(d, d);
        let mut mc2: DMatrix<f64> = DMatrix::zeros(d, d); // second moment of products for SE
        let chols: Vec<_> = order
            .iter()
            .map(|&m| {
                state.cores[m].slice_cov[idx.0[m] - 1]
                    .clone()
                    .cholesky()
                    .expect("test covariance is SPD")
            })
            .collect();
        for _ in 0..samples {
            let mut q = DMatrix::identity(2, 2);
            for (pos, &m) in order.iter().enumerate() {
                let mean = state.cores[m].slice_mean_vec(idx.0[m] - 1);
                let z: DVector<f64> =
                    DVector::from_fn(4, |_, _| rng.sample(rand_distr::StandardNormal));
                let v = &mean + chols[pos].l() * z;
                let zm = DMatrix::from_fn(2, 2, |a, b| v[a + 2 * b]);
                q *= zm;
            }
            let row = row_from_mean_chain(&q);
            for i in 0..d {
                for j in 0..d {
                    let prod = row[i] * row[j];
                    mc[(i, j)] += prod;
                    mc2[(i, j)] += prod * prod;
                }
            }
        }
        let ns = samples as f64;
        for i in 0..d {
            for j in 0..d {
                let mean = mc[(i, j)] / ns;
                let var = (mc2[(i, j)] / ns - mean * mean).max(0.0);
                let se = (var / ns).sqrt();
                assert!(
                    (mean - second[(i, j)]).abs() <= 3.0 * se + 1e-9,
                    "entry ({i},{j}): mc {mean} vs exact {} (se {se})",
                    second[(i, j)]
                );
            }
        }
    }
}

//! The closed-form coordinate updates and rank pruning.

use super::moments::accumulate_slice_sums;
use super::{CorePosterior, MomentMode, PosteriorState};
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, IndexMask};
use crate::tr::tr_full;
use nalgebra::{Cholesky, DMatrix, DVector};

fn check_shapes(state: &PosteriorState, y: &DenseTensor, mask: &IndexMask) -> Result<()> {
    let shape = state.data_shape()?;
    if y.shape() != &shape || mask.shape() != &shape {
        return Err(Error::ShapeMismatch("state, data and mask shapes differ".into()));
    }
    Ok(())
}

/// Invert an SPD precision matrix through its Cholesky factorization, adding
/// a small diagonal jitter only if the factorization fails. Returns the
/// covariance and whether jitter was needed.
fn spd_inverse(mut precision: DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    match Cholesky::new(precision.clone()) {
        Some(chol) => Ok((symmetrized(chol.inverse()), false)),
        None => {
            let d = precision.nrows();
            let mean_diag = precision.diagonal().sum() / d as f64;
            let jitter = 1e-10 * mean_diag.abs().max(f64::MIN_POSITIVE);
            for i in 0..d {
                precision[(i, i)] += jitter;
            }
            let chol = Cholesky::new(precision).ok_or_else(|| {
                Error::Numerical("precision matrix not positive definite after jitter".into())
            })?;
            Ok((symmetrized(chol.inverse()), true))
        }
    }
}

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Gaussian update of core n (1-based): per lateral slice,
/// V = (E[tau] * sum E[row row^T] + E[U^(n)] kron E[U^(n-1)])^-1 and
/// mean = E[tau] * V * sum E[row] (y - E[S]). Slices with no observations
/// revert to their prior.
pub fn update_core(
    state: &mut PosteriorState,
    y: &DenseTensor,
    mask: &IndexMask,
    n: usize,
) -> Result<()> {
    check_shapes(state, y, mask)?;
    let nm = state.n_modes();
    if n < 1 || n > nm {
        return Err(Error::IndexOutOfRange(format!("mode {n} outside 1..={nm}")));
    }
    let residual: Vec<f64> =
        y.data().iter().zip(state.sparse.mean.data()).map(|(a, b)| a - b).collect();
    let sums = accumulate_slice_sums(state, &residual, mask, n)?;

    let e_tau = state.tau.expected();
    let u_n = state.expected_u(n);
    let u_prev = state.expected_u_prev(n);
    let r_prev = state.ranks.ranks()[n - 1];
    let r_n = state.ranks.ranks()[n];
    let d = r_prev * r_n;

    for (i_n, sum) in sums.into_iter().enumerate() {
        let mut precision = sum.quad * e_tau;
        for b in 0..r_n {
            for a in 0..r_prev {
                precision[(a + r_prev * b, a + r_prev * b)] += u_n[b] * u_prev[a];
            }
        }
        let (cov, jittered) = spd_inverse(precision)?;
        if jittered {
            state.jitter_events += 1;
        }
        let mean: DVector<f64> = if sum.count == 0 {
            DVector::zeros(d)
        } else {
            &cov * sum.lin * e_tau
        };
        state.cores[n - 1].set_slice(i_n, &mean, cov);
    }
    Ok(())
}

/// Gamma update of the ARD precisions at ring position n (1-based). Position
/// n couples the frontal slices of core n and the horizontal slices of core
/// n+1 (indices wrapping modulo N).
pub fn update_ard(state: &mut PosteriorState, n: usize) -> Result<()> {
    let nm = state.n_modes();
    if n < 1 || n > nm {
        return Err(Error::IndexOutOfRange(format!("position {n} outside 1..={nm}")));
    }
    let next = n % nm + 1; // core after the shared ring position
    let core_n = &state.cores[n - 1];
    let core_next = &state.cores[next - 1];
    let (r_prev, i_n, r_n) = (core_n.r_prev(), core_n.mode_dim(), core_n.r_next());
    let (i_next, r_next_next) = (core_next.mode_dim(), core_next.r_next());
    debug_assert_eq!(core_next.r_prev(), r_n);

    let u_prev = state.expected_u_prev(n);
    let u_next = state.expected_u(next);
    let hyper = state.hyper;

    let c_val = hyper.c0 + 0.5 * (i_n * r_prev + i_next * r_next_next) as f64;
    let mut c_tilde = vec![c_val; r_n];
    let mut d_tilde = vec![hyper.d0; r_n];
    for r in 0..r_n {
        // Tr(E[U^(n-1)] E[Z_n(r) Z_n(r)^T]) over the frontal slice (:,:,r)
        let mut t1 = 0.0;
        for a in 0..r_prev {
            let p = a + r_prev * r;
            let mut second = 0.0;
            for i in 0..i_n {
                let m = core_n.mean.data()[a + r_prev * (i + i_n * r)];
                second += m * m + core_n.slice_cov[i][(p, p)];
            }
            t1 += u_prev[a] * second;
        }
        // Tr(E[U^(n+1)] E[Z_{n+1}(r)^T Z_{n+1}(r)]) over the horizontal slice
        // (r,:,:)
        let mut t2 = 0.0;
        for b in 0..r_next_next {
            let p = r + r_n * b;
            let mut second = 0.0;
            for i in 0..i_next {
                let m = core_next.mean.data()[r + r_n * (i + i_next * b)];
                second += m * m + core_next.slice_cov[i][(p, p)];
            }
            t2 += u_next[b] * second;
        }
        d_tilde[r] += 0.5 * (t1 + t2);
    }
    state.ard[n - 1].c_tilde = std::mem::take(&mut c_tilde);
    state.ard[n - 1].d_tilde = std::mem::take(&mut d_tilde);
    Ok(())
}

/// Gaussian update of the sparse component on the observed support:
/// variance (E[eta] + E[tau])^-1, mean = var * E[tau] * (y - E[recon]).
pub fn update_sparse(state: &mut PosteriorState, y: &DenseTensor, mask: &IndexMask) -> Result<()> {
    check_shapes(state, y, mask)?;
    let recon = tr_full(&state.mean_cores()?)?;
    let e_tau = state.tau.expected();
    for (off, &bit) in mask.bits().iter().enumerate() {
        if bit == 1 {
            let e_eta = state.eta.a.data()[off] / state.eta.b.data()[off];
            let var = 1.0 / (e_eta + e_tau);
            state.sparse.var.data_mut()[off] = var;
            state.sparse.mean.data_mut()[off] = var * e_tau * (y.data()[off] - recon.data()[off]);
        } else {
            state.sparse.mean.data_mut()[off] = 0.0;
            state.sparse.var.data_mut()[off] = 0.0;
        }
    }
    Ok(())
}

/// Gamma update of the per-entry sparse precisions on the observed support.
pub fn update_eta(state: &mut PosteriorState, mask: &IndexMask) -> Result<()> {
    let hyper = state.hyper;
    for (off, &bit) in mask.bits().iter().enumerate() {
        if bit == 1 {
            let s = state.sparse.mean.data()[off];
            let v = state.sparse.var.data()[off];
            state.eta.a.data_mut()[off] = hyper.a0_eta + 0.5;
            state.eta.b.data_mut()[off] = hyper.b0_eta + 0.5 * (s * s + v);
        }
    }
    Ok(())
}

/// Expected squared residual sum over the observed support:
/// sum of (y - E[recon] - E[S])^2 + Var[recon] + Var[S]. Var[recon] is exact
/// under mean-field independence in exact mode, zero in plugin mode.
pub(crate) fn expected_sq_residual_sum(
    state: &PosteriorState,
    y: &DenseTensor,
    mask: &IndexMask,
) -> Result<f64> {
    let recon = tr_full(&state.mean_cores()?)?;
    let mut point = 0.0;
    let mut recon_sq = 0.0;
    for (off, &bit) in mask.bits().iter().enumerate() {
        if bit == 1 {
            let r = y.data()[off] - recon.data()[off] - state.sparse.mean.data()[off];
            point += r * r + state.sparse.var.data()[off];
            recon_sq += recon.data()[off] * recon.data()[off];
        }
    }
    let var_recon = match state.moment_mode {
        MomentMode::Plugin => 0.0,
        MomentMode::Exact => {
            // Sum of E[recon^2] over observed entries via the design moments
            // of any fixed core; the last one is as good as any.
            let n = state.n_modes();
            let zeros = vec![0.0; y.data().len()];
            let sums = accumulate_slice_sums(state, &zeros, mask, n)?;
            let core = &state.cores[n - 1];
            let mut e_recon_sq = 0.0;
            for (i, sum) in sums.iter().enumerate() {
                let z = core.slice_mean_vec(i);
                let second = &core.slice_cov[i] + &z * z.transpose();
                e_recon_sq += sum.quad.zip_fold(&second, 0.0, |acc, a, b| acc + a * b);
            }
            (e_recon_sq - recon_sq).max(0.0)
        }
    };
    Ok(point + var_recon)
}

/// Gamma update of the dense noise precision.
pub fn update_tau(state: &mut PosteriorState, y: &DenseTensor, mask: &IndexMask) -> Result<()> {
    check_shapes(state, y, mask)?;
    let observed = mask.observed_count();
    let hyper = state.hyper;
    state.tau.a = hyper.a0_tau + 0.5 * observed as f64;
    state.tau.b = hyper.b0_tau + 0.5 * expected_sq_residual_sum(state, y, mask)?;
    Ok(())
}

fn shrink_third_mode(core: &mut CorePosterior, keep: &[usize]) {
    let (r0, im, r1) = (core.r_prev(), core.mode_dim(), core.r_next());
    debug_assert!(keep.iter().all(|&b| b < r1));
    let nk = keep.len();
    let old = core.mean.data();
    let mut ordered = vec![0.0; r0 * im * nk];
    for (nb, &b) in keep.iter().enumerate() {
        for i in 0..im {
            for a in 0..r0 {
                ordered[a + r0 * (i + im * nb)] = old[a + r0 * (i + im * b)];
            }
        }
    }
    let shape = crate::tensor::Shape::new(vec![r0, im, nk]).expect("positive dims");
    core.mean = DenseTensor::new(shape, ordered).expect("sizes agree");
    let mut sel = Vec::with_capacity(r0 * nk);
    for &b in keep {
        for a in 0..r0 {
            sel.push(a + r0 * b);
        }
    }
    for cov in &mut core.slice_cov {
        *cov = DMatrix::from_fn(sel.len(), sel.len(), |p, q| cov[(sel[p], sel[q])]);
    }
}

fn shrink_first_mode(core: &mut CorePosterior, keep: &[usize]) {
    let (r0, im, r1) = (core.r_prev(), core.mode_dim(), core.r_next());
    debug_assert!(keep.iter().all(|&a| a < r0));
    let nk = keep.len();
    let old = core.mean.data();
    let mut ordered = vec![0.0; nk * im * r1];
    for b in 0..r1 {
        for i in 0..im {
            for (na, &a) in keep.iter().enumerate() {
                ordered[na + nk * (i + im * b)] = old[a + r0 * (i + im * b)];
            }
        }
    }
    let shape = crate::tensor::Shape::new(vec![nk, im, r1]).expect("positive dims");
    core.mean = DenseTensor::new(shape, ordered).expect("sizes agree");
    let mut sel = Vec::with_capacity(nk * r1);
    for b in 0..r1 {
        for &a in keep {
            sel.push(a + r0 * b);
        }
    }
    for cov in &mut core.slice_cov {
        *cov = DMatrix::from_fn(sel.len(), sel.len(), |p, q| cov[(sel[p], sel[q])]);
    }
}

/// Remove shrunk rank components. At each ring position the component power
/// is the mean squared entry over the frontal slice of the previous core and
/// the horizontal slice of the next core; components below
/// threshold * (mean power at that position) are removed, never reducing a
/// rank below 1. Returns the number of removed components.
pub fn prune(state: &mut PosteriorState, threshold: f64) -> Result<usize> {
    let nm = state.n_modes();
    let mut removed_total = 0;
    for n in 1..=nm {
        let next = n % nm + 1;
        let r_n = state.cores[n - 1].r_next();
        if r_n <= 1 {
            continue;
        }
        let core_n = &state.cores[n - 1];
        let core_next = &state.cores[next - 1];
        let (r_prev, i_n) = (core_n.r_prev(), core_n.mode_dim());
        let (i_next, r_nn) = (core_next.mode_dim(), core_next.r_next());
        // Product of the two per-slice mean powers: invariant to the scale
        // slosh between adjacent cores (a*c conserved under (a/k, c*k)), so a
        // component reads as dead when EITHER side carries no signal.
        let powers: Vec<f64> = (0..r_n)
            .map(|r| {
                let mut front = 0.0;
                for i in 0..i_n {
                    for a in 0..r_prev {
                        let v = core_n.mean.data()[a + r_prev * (i + i_n * r)];
                        front += v * v;
                    }
                }
                let mut horiz = 0.0;
                for b in 0..r_nn {
                    for i in 0..i_next {
                        let v = core_next.mean.data()[r + r_n * (i + i_next * b)];
                        horiz += v * v;
                    }
                }
                (front / (r_prev * i_n) as f64) * (horiz / (i_next * r_nn) as f64)
            })
            .collect();
        let mean_power = powers.iter().sum::<f64>() / r_n as f64;
        let cutoff = threshold * mean_power;
        let mut keep: Vec<usize> = (0..r_n).filter(|&r| powers[r] >= cutoff).collect();
        if keep.is_empty() {
            // never reduce below rank 1: keep the strongest component
            let best = powers
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            keep.push(best);
        }
        if keep.len() == r_n {
            continue;
        }
        removed_total += r_n - keep.len();
        shrink_third_mode(&mut state.cores[n - 1], &keep);
        shrink_first_mode(&mut state.cores[next - 1], &keep);
        let ard = &mut state.ard[n - 1];
        ard.c_tilde = keep.iter().map(|&r| ard.c_tilde[r]).collect();
        ard.d_tilde = keep.iter().map(|&r| ard.d_tilde[r]).collect();
        let mut ranks = state.ranks.ranks().to_vec();
        ranks[n] = keep.len();
        if n == nm {
            ranks[0] = keep.len();
        }
        state.ranks = crate::tr::TRRank::new(ranks)?;
    }
    state.check_rank_chain()?;
    Ok(removed_total)
}

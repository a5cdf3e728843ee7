//! Evidence lower bound of the mean-field posterior, assembled term by term
//! from the conjugate-exponential expectations plus the factor entropies.

use super::updates::expected_sq_residual_sum;
use super::PosteriorState;
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, IndexMask};
use nalgebra::Cholesky;
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;

fn gamma_entropy(a: f64, b: f64) -> f64 {
    a - b.ln() + ln_gamma(a) + (1.0 - a) * digamma(a)
}

fn gamma_e_ln(a: f64, b: f64) -> f64 {
    digamma(a) - b.ln()
}

/// The full bound. Requires every Gaussian factor on the observed support to
/// have strictly positive (co)variance, which holds after any update sweep.
pub fn elbo(state: &PosteriorState, y: &DenseTensor, mask: &IndexMask) -> Result<f64> {
    let shape = state.data_shape()?;
    if y.shape() != &shape || mask.shape() != &shape {
        return Err(Error::ShapeMismatch("state, data and mask shapes differ".into()));
    }
    let ln2pi = (2.0 * PI).ln();
    let h = state.hyper;
    let m_obs = mask.observed_count() as f64;

    // Likelihood expectation.
    let e_tau = state.tau.expected();
    let e_ln_tau = gamma_e_ln(state.tau.a, state.tau.b);
    let exp_sq = expected_sq_residual_sum(state, y, mask)?;
    let mut val = 0.5 * m_obs * (e_ln_tau - ln2pi) - 0.5 * e_tau * exp_sq;

    // Core Gaussian priors and entropies, slice by slice.
    let nm = state.n_modes();
    for n in 1..=nm {
        let core = &state.cores[n - 1];
        let (r_prev, i_n, r_n) = (core.r_prev(), core.mode_dim(), core.r_next());
        let d = (r_prev * r_n) as f64;
        let u_n = state.expected_u(n);
        let u_prev = state.expected_u_prev(n);
        let pos_n = &state.ard[n - 1];
        let pos_prev = &state.ard[(n + nm - 2) % nm];
        let eln_n: f64 =
            (0..r_n).map(|r| gamma_e_ln(pos_n.c_tilde[r], pos_n.d_tilde[r])).sum();
        let eln_prev: f64 =
            (0..r_prev).map(|r| gamma_e_ln(pos_prev.c_tilde[r], pos_prev.d_tilde[r])).sum();
        let e_lndet_prior = r_prev as f64 * eln_n + r_n as f64 * eln_prev;
        for i in 0..i_n {
            let cov = &core.slice_cov[i];
            let mut quad = 0.0;
            for b in 0..r_n {
                for a in 0..r_prev {
                    let p = a + r_prev * b;
                    let m = core.mean.data()[a + r_prev * (i + i_n * b)];
                    quad += u_n[b] * u_prev[a] * (m * m + cov[(p, p)]);
                }
            }
            val += 0.5 * (e_lndet_prior - d * ln2pi - quad);
            let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
                Error::Numerical("core covariance not positive definite in bound".into())
            })?;
            let ln_det: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
            val += 0.5 * (d * (1.0 + ln2pi) + ln_det);
        }
    }

    // ARD Gamma priors and entropies.
    for pos in &state.ard {
        for (&c, &dd) in pos.c_tilde.iter().zip(&pos.d_tilde) {
            let e_u = c / dd;
            let e_ln = gamma_e_ln(c, dd);
            val += h.c0 * h.d0.ln() - ln_gamma(h.c0) + (h.c0 - 1.0) * e_ln - h.d0 * e_u;
            val += gamma_entropy(c, dd);
        }
    }

    // Sparse Gaussians and their per-entry Gamma precisions, observed only.
    for (off, &bit) in mask.bits().iter().enumerate() {
        if bit == 0 {
            continue;
        }
        let s = state.sparse.mean.data()[off];
        let v = state.sparse.var.data()[off];
        if v <= 0.0 {
            return Err(Error::Numerical("sparse variance not positive in bound".into()));
        }
        let (ae, be) = (state.eta.a.data()[off], state.eta.b.data()[off]);
        let e_eta = ae / be;
        let e_ln_eta = gamma_e_ln(ae, be);
        val += 0.5 * (e_ln_eta - ln2pi - e_eta * (s * s + v));
        val += 0.5 * (1.0 + ln2pi + v.ln());
        val += h.a0_eta * h.b0_eta.ln() - ln_gamma(h.a0_eta) + (h.a0_eta - 1.0) * e_ln_eta
            - h.b0_eta * e_eta;
        val += gamma_entropy(ae, be);
    }

    // Noise precision prior and entropy.
    val += h.a0_tau * h.b0_tau.ln() - ln_gamma(h.a0_tau) + (h.a0_tau - 1.0) * e_ln_tau
        - h.b0_tau * e_tau;
    val += gamma_entropy(state.tau.a, state.tau.b);

    if val.is_finite() {
        Ok(val)
    } else {
        Err(Error::Numerical("bound is not finite".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::testutil::random_state;
    use crate::inference::{
        update_ard, update_core, update_eta, update_sparse, update_tau, MomentMode,
    };
    use crate::tensor::Shape;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sweep(state: &mut PosteriorState, y: &DenseTensor, mask: &IndexMask) {
        for n in 1..=state.n_modes() {
            update_core(state, y, mask, n).unwrap();
            update_ard(state, n).unwrap();
        }
        update_sparse(state, y, mask).unwrap();
        update_eta(state, mask).unwrap();
        update_tau(state, y, mask).unwrap();
    }

    fn problem(dims: &[usize], seed: u64) -> (DenseTensor, IndexMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(dims.to_vec()).unwrap();
        let data: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let bits: Vec<u8> = (0..shape.len()).map(|_| u8::from(rng.gen_bool(0.8))).collect();
        (
            DenseTensor::new(shape.clone(), data).unwrap(),
            IndexMask::new(shape, bits).unwrap(),
        )
    }

    #[test]
    fn bound_never_decreases_over_sweeps() {
        // coordinate ascent is only guaranteed for exact moments; plugin mode
        // trades the guarantee for speed
        let dims = [3, 4, 2];
        let (y, mask) = problem(&dims, 21);
        let mut state = random_state(&dims, &[2, 2, 2, 2], 0.01, 22, MomentMode::Exact);
        sweep(&mut state, &y, &mask);
        let mut prev = elbo(&state, &y, &mask).unwrap();
        for _ in 0..10 {
            sweep(&mut state, &y, &mask);
            let next = elbo(&state, &y, &mask).unwrap();
            let rel = (next - prev) / prev.abs().max(1.0);
            assert!(rel > -1e-10, "bound dropped: {prev} -> {next}");
            prev = next;
        }
    }

    #[test]
    fn plugin_sweeps_run_and_stay_finite() {
        let dims = [3, 4, 2];
        let (y, mask) = problem(&dims, 21);
        let mut state = random_state(&dims, &[2, 2, 2, 2], 0.01, 22, MomentMode::Plugin);
        for _ in 0..10 {
            sweep(&mut state, &y, &mask);
        }
        assert!(elbo(&state, &y, &mask).unwrap().is_finite());
    }

    #[test]
    fn updated_blocks_are_stationary_points_of_the_bound() {
        // After its closed-form update, each factor maximizes the bound over
        // its own block; any perturbation must not raise it.
        let dims = [3, 2, 3];
        let (y, mask) = problem(&dims, 31);
        let mut state = random_state(&dims, &[2, 2, 2, 2], 0.01, 32, MomentMode::Exact);
        sweep(&mut state, &y, &mask);
        sweep(&mut state, &y, &mask);
        let base = elbo(&state, &y, &mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);

        // tau was updated last in the sweep, so it is optimal for `state`
        for scale in [0.99, 1.01, 0.9, 1.1] {
            let mut bumped = state.clone();
            bumped.tau.b *= scale;
            let b = elbo(&bumped, &y, &mask).unwrap();
            assert!(b <= base + 1e-9, "tau perturbation raised bound");
        }

        // sparse means, holding every other factor fixed
        update_sparse(&mut state, &y, &mask).unwrap();
        let base_sparse = elbo(&state, &y, &mask).unwrap();
        let obs: Vec<usize> = mask
            .bits()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| i)
            .collect();
        for _ in 0..5 {
            let mut bumped = state.clone();
            let k = obs[rng.gen_range(0..obs.len())];
            bumped.sparse.mean.data_mut()[k] += rng.gen_range(-0.05..0.05);
            let b = elbo(&bumped, &y, &mask).unwrap();
            assert!(b <= base_sparse + 1e-9, "sparse perturbation raised bound");
        }

        // core slice means, holding every other factor fixed
        update_core(&mut state, &y, &mask, 1).unwrap();
        let base_core = elbo(&state, &y, &mask).unwrap();
        for _ in 0..5 {
            let mut bumped = state.clone();
            let k = rng.gen_range(0..bumped.cores[0].mean.data().len());
            bumped.cores[0].mean.data_mut()[k] += rng.gen_range(-0.05..0.05);
            let b = elbo(&bumped, &y, &mask).unwrap();
            assert!(b <= base_core + 1e-9, "core perturbation raised bound");
        }
    }

    #[test]
    fn bound_is_invariant_to_ring_relabeling() {
        // Rotating the ring by one position and permuting the data the same
        // way describes the identical model, so the bound must agree.
        let dims = [3, 2, 4];
        let (y, mask) = problem(&dims, 41);
        let mut state = random_state(&dims, &[2, 3, 2, 2], 0.01, 42, MomentMode::Exact);
        sweep(&mut state, &y, &mask);
        let base = elbo(&state, &y, &mask).unwrap();

        let mut rotated = state.clone();
        rotated.cores.rotate_left(1);
        rotated.ard.rotate_left(1);
        let mut ranks = state.ranks.ranks()[1..].to_vec();
        ranks.push(state.ranks.ranks()[1]);
        rotated.ranks = crate::tr::TRRank::new(ranks).unwrap();
        let y2 = crate::tensor::circular_permute(&y, 1).unwrap();
        let mask_t = DenseTensor::new(
            mask.shape().clone(),
            mask.bits().iter().map(|&b| b as f64).collect(),
        )
        .unwrap();
        let mask_t2 = crate::tensor::circular_permute(&mask_t, 1).unwrap();
        let mask2 = IndexMask::new(
            mask_t2.shape().clone(),
            mask_t2.data().iter().map(|&v| v as u8).collect(),
        )
        .unwrap();
        let sp = crate::tensor::circular_permute(&state.sparse.mean, 1).unwrap();
        let sv = crate::tensor::circular_permute(&state.sparse.var, 1).unwrap();
        rotated.sparse.mean = sp;
        rotated.sparse.var = sv;
        rotated.eta.a = crate::tensor::circular_permute(&state.eta.a, 1).unwrap();
        rotated.eta.b = crate::tensor::circular_permute(&state.eta.b, 1).unwrap();
        let other = elbo(&rotated, &y2, &mask2).unwrap();
        assert!((base - other).abs() < 1e-8 * base.abs().max(1.0), "{base} vs {other}");
    }
}

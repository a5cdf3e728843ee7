//! Posterior initialization: either a sequential-SVD ring approximation of
//! the observed tensor or random cores.

use super::{
    ArdPosterior, CorePosterior, EtaPosterior, InferenceConfig, InitMode, PosteriorState,
    SparsePosterior, TauPosterior,
};
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, IndexMask, Shape};
use crate::tr::{TRCores, TRRank};
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Left singular vectors and values sorted by descending singular value,
/// computed from the Gram matrix of the (short) row side. Squaring limits the
/// resolvable dynamic range to roughly sqrt(machine epsilon), which is plenty
/// for rank selection.
fn left_singular(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let gram = m * m.transpose();
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let s: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    let mut u = DMatrix::zeros(m.nrows(), order.len());
    for (k, &i) in order.iter().enumerate() {
        u.column_mut(k).copy_from(&eig.eigenvectors.column(i));
    }
    (s, u)
}

/// Relative cutoff for numerical rank, above the sqrt-epsilon noise floor of
/// the Gram spectrum.
const RANK_TOL: f64 = 1e-7;

/// Rank-revealing split M = U (U^T M) with a relative spectral cutoff.
fn split_svd(m: DMatrix<f64>, cap: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (s, u) = left_singular(&m);
    let tol = s[0] * RANK_TOL;
    let rank = s.iter().filter(|&&v| v > tol).count().clamp(1, cap.max(1));
    let u = u.columns(0, rank).into_owned();
    let rem = u.transpose() * m;
    Ok((u, rem))
}

/// Sequential-SVD ring approximation of a dense tensor with per-position rank
/// caps. The first unfolding rank is split between the two ring ranks that
/// close around mode 1; the remaining modes are peeled off left to right.
pub fn tr_svd_approx(t: &DenseTensor, caps: &TRRank) -> Result<TRCores> {
    let dims = t.shape().dims().to_vec();
    let nm = dims.len();
    if caps.n_modes() != nm {
        return Err(Error::ShapeMismatch(format!(
            "rank caps have {} modes, tensor has {nm}",
            caps.n_modes()
        )));
    }
    let caps = caps.ranks();
    if nm == 1 {
        // single-core ring (1, I_1, 1): the trace of each slice is the entry
        let shape = Shape::new(vec![1, dims[0], 1])?;
        let core = DenseTensor::new(shape, t.data().to_vec())?;
        return TRCores::new(vec![core]);
    }

    let total = t.shape().len();
    let c = DMatrix::from_column_slice(dims[0], total / dims[0], t.data());
    let (s, u) = left_singular(&c);
    let tol = s[0] * RANK_TOL;
    let delta = s.iter().filter(|&&v| v > tol).count().max(1);
    // split delta multiplicatively across the two ring ranks around mode 1
    let r0 = ((delta as f64).sqrt().floor() as usize).clamp(1, caps[0]);
    let r1 = (delta / r0).clamp(1, caps[1]);
    let rank = r0 * r1;
    let u = u.columns(0, rank).into_owned();
    let w = u.transpose() * &c;

    // core 1: slice Z_1(i)[a, b] = U[i, a + r0 b]
    let mut core1 = vec![0.0; r0 * dims[0] * r1];
    for b in 0..r1 {
        for i in 0..dims[0] {
            for a in 0..r0 {
                core1[a + r0 * (i + dims[0] * b)] = u[(i, a + r0 * b)];
            }
        }
    }
    let mut cores = vec![DenseTensor::new(Shape::new(vec![r0, dims[0], r1])?, core1)?];

    // remainder M(b, i_2..i_N, a) = W[a + r0 b, j]
    let rest: usize = dims[1..].iter().product();
    let mut m = vec![0.0; r1 * rest * r0];
    for a in 0..r0 {
        for j in 0..rest {
            for b in 0..r1 {
                m[b + r1 * (j + rest * a)] = w[(a + r0 * b, j)];
            }
        }
    }

    if nm == 2 {
        cores.push(DenseTensor::new(Shape::new(vec![r1, dims[1], r0])?, m)?);
        return TRCores::new(cores);
    }

    // peel middle modes: remainder rows are (R_{k-1} I_k), columns the rest
    let mut left = r1;
    let mut mat = DMatrix::from_column_slice(left * dims[1], m.len() / (left * dims[1]), &m);
    for k in 1..nm - 1 {
        let (uk, rem) = split_svd(std::mem::replace(&mut mat, DMatrix::zeros(0, 0)), caps[k + 1])?;
        let rk = uk.ncols();
        cores.push(DenseTensor::new(
            Shape::new(vec![left, dims[k], rk])?,
            uk.as_slice().to_vec(),
        )?);
        left = rk;
        if k + 1 < nm - 1 {
            mat = DMatrix::from_column_slice(
                left * dims[k + 1],
                rem.len() / (left * dims[k + 1]),
                rem.as_slice(),
            );
        } else {
            // last core: remainder is already (R_{N-1}, I_N r0)
            cores.push(DenseTensor::new(
                Shape::new(vec![left, dims[nm - 1], r0])?,
                rem.as_slice().to_vec(),
            )?);
        }
    }
    TRCores::new(cores)
}

/// Variational state at iteration zero: approximation (or random) core means
/// padded to the rank caps, identity slice covariance, unit expected
/// precisions everywhere, and a zero-mean unit-variance sparse component on
/// the observed support.
pub fn initialize(
    y: &DenseTensor,
    mask: &IndexMask,
    config: &InferenceConfig,
) -> Result<PosteriorState> {
    let shape = y.shape().clone();
    let nm = shape.ndim();
    config.validate(nm)?;
    if mask.shape() != &shape {
        return Err(Error::ShapeMismatch("data and mask shapes differ".into()));
    }
    if mask.observed_count() == 0 {
        return Err(Error::EmptyObservations);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

    let mean_cores = match config.init_mode {
        InitMode::TrApprox => {
            let mut filled = y.clone();
            for (v, &bit) in filled.data_mut().iter_mut().zip(mask.bits()) {
                if bit == 0 {
                    *v = 0.0;
                }
            }
            tr_svd_approx(&filled, &config.max_rank)?
        }
        InitMode::Random => {
            let ranks = config.max_rank.ranks();
            let cores: Result<Vec<DenseTensor>> = (0..nm)
                .map(|k| {
                    let s = Shape::new(vec![ranks[k], shape.dims()[k], ranks[k + 1]])?;
                    let data: Vec<f64> =
                        (0..s.len()).map(|_| rng.sample(StandardNormal)).collect();
                    DenseTensor::new(s, data)
                })
                .collect();
            TRCores::new(cores?)?
        }
    };

    // Pad every ring position up to its cap with zero-mean directions. Their
    // identity covariance keeps the reconstruction variance high at the start,
    // which holds the noise precision down while rank selection happens.
    let caps = config.max_rank.ranks();
    let approx_ranks = mean_cores.tr_rank();
    let raw: Vec<DenseTensor> = mean_cores.into_cores();
    let cores: Vec<CorePosterior> = raw
        .into_iter()
        .enumerate()
        .map(|(k, small)| {
            let (r0, i_n, r1) = (caps[k], shape.dims()[k], caps[k + 1]);
            let (s0, s1) = (approx_ranks.ranks()[k], approx_ranks.ranks()[k + 1]);
            let mut mean =
                DenseTensor::zeros(Shape::new(vec![r0, i_n, r1]).expect("valid core shape"));
            for c in 0..s1 {
                for j in 0..i_n {
                    for a in 0..s0 {
                        mean.data_mut()[a + r0 * (j + i_n * c)] =
                            small.data()[a + s0 * (j + i_n * c)];
                    }
                }
            }
            let slice_cov = vec![DMatrix::identity(r0 * r1, r0 * r1); i_n];
            CorePosterior { mean, slice_cov }
        })
        .collect();
    let ranks = config.max_rank.clone();

    let hyper = config.hyper;
    // Gamma factors start at unit mean, matching the hyperprior shapes.
    let ard: Vec<ArdPosterior> = (0..nm)
        .map(|k| {
            let r = ranks.ranks()[k + 1];
            ArdPosterior { c_tilde: vec![hyper.c0; r], d_tilde: vec![hyper.c0; r] }
        })
        .collect();

    // zero-mean, unit-variance start: the outlier support then emerges from
    // the fit residuals instead of having to un-learn a random dense start
    let sparse_mean = DenseTensor::zeros(shape.clone());
    let mut sparse_var = DenseTensor::zeros(shape.clone());
    for (off, &bit) in mask.bits().iter().enumerate() {
        if bit == 1 {
            sparse_var.data_mut()[off] = 1.0;
        }
    }

    Ok(PosteriorState {
        cores,
        ard,
        sparse: SparsePosterior { mean: sparse_mean, var: sparse_var },
        eta: EtaPosterior {
            a: DenseTensor::filled(shape.clone(), hyper.a0_eta),
            b: DenseTensor::filled(shape.clone(), hyper.a0_eta),
        },
        tau: TauPosterior { a: hyper.a0_tau, b: hyper.a0_tau },
        hyper,
        ranks,
        moment_mode: config.moment_mode,
        jitter_events: 0,
    })
}

//! Mean-field variational Bayes engine for robust tensor-ring completion.
//!
//! The posterior over cores, ARD precisions, the sparse component and the two
//! noise precisions is updated in closed form by coordinate ascent on the
//! evidence lower bound; shrunk rank components are pruned as the fit
//! proceeds, which determines the TR rank automatically.

mod elbo;
mod fit;
mod init;
mod moments;
#[doc(hidden)]
pub mod testutil;
mod updates;

pub use elbo::elbo;
pub use fit::{fit, predict, RunReport};
pub use init::{initialize, tr_svd_approx};
pub use moments::expected_design_moments;
pub use updates::{prune, update_ard, update_core, update_eta, update_sparse, update_tau};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Shape};
use crate::tr::{TRCores, TRRank};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// How expected second moments of subchain design rows are computed.
///
/// `Exact` chains per-slice Kronecker second moments and preserves the
/// coordinate-ascent ELBO guarantee; `Plugin` substitutes outer products of
/// means, which is cheaper at large rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentMode {
    Exact,
    Plugin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    TrApprox,
    Random,
}

/// Gamma hyperprior constants; the non-informative default is 1e-6 for all.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Hyperpriors {
    pub c0: f64,
    pub d0: f64,
    pub a0_eta: f64,
    pub b0_eta: f64,
    pub a0_tau: f64,
    pub b0_tau: f64,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Hyperpriors {
            c0: 1e-6,
            d0: 1e-6,
            a0_eta: 1e-6,
            b0_eta: 1e-6,
            a0_tau: 1e-6,
            b0_tau: 1e-6,
        }
    }
}

impl Hyperpriors {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c0, self.d0, self.a0_eta, self.b0_eta, self.a0_tau, self.b0_tau];
        if all.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("hyperpriors must be strictly positive".into()));
        }
        Ok(())
    }
}

/// Controls for a fit.
#[derive(Debug, Clone)]
pub struct InferenceConfig {
    pub max_rank: TRRank,
    pub max_iters: usize,
    pub elbo_rel_tol: f64,
    pub prune_threshold: f64,
    pub moment_mode: MomentMode,
    pub seed: u64,
    pub init_mode: InitMode,
    /// Sweeps at the start with the sparse factor held at zero. Rank
    /// selection happens while the noise precision is still low; enabling the
    /// sparse factor too early lets it swallow the low-rank misfit.
    pub sparse_warmup: usize,
    pub hyper: Hyperpriors,
}

impl InferenceConfig {
    /// Defaults for an N-mode problem: max rank 30 everywhere, 200 sweeps,
    /// ELBO tolerance 1e-6, prune threshold 1e-3, exact moments, random
    /// initialization, 60 warmup sweeps before the sparse factor activates.
    /// The long warmup keeps the noise precision moderate while ARD settles
    /// the ranks; ending it early can freeze a redundant representation in.
    pub fn default_for(n_modes: usize) -> Self {
        InferenceConfig {
            max_rank: TRRank::uniform(n_modes, 30).expect("uniform rank is ring closed"),
            max_iters: 200,
            elbo_rel_tol: 1e-6,
            prune_threshold: 1e-3,
            moment_mode: MomentMode::Exact,
            seed: 0,
            init_mode: InitMode::Random,
            sparse_warmup: 60,
            hyper: Hyperpriors::default(),
        }
    }

    pub fn validate(&self, n_modes: usize) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.elbo_rel_tol > 0.0) {
            return Err(Error::InvalidArgument("elbo_rel_tol must be > 0".into()));
        }
        if self.prune_threshold < 0.0 {
            return Err(Error::InvalidArgument("prune_threshold must be >= 0".into()));
        }
        if self.max_rank.n_modes() != n_modes {
            return Err(Error::ShapeMismatch(format!(
                "max_rank has {} modes, tensor has {}",
                self.max_rank.n_modes(),
                n_modes
            )));
        }
        self.hyper.validate()
    }
}

/// Gaussian posterior over one core: mean tensor plus one covariance matrix
/// per lateral slice over vec(Z_n(i_n)).
#[derive(Debug, Clone)]
pub struct CorePosterior {
    pub mean: DenseTensor,
    pub slice_cov: Vec<DMatrix<f64>>,
}

impl CorePosterior {
    pub fn r_prev(&self) -> usize {
        self.mean.shape().dims()[0]
    }

    pub fn mode_dim(&self) -> usize {
        self.mean.shape().dims()[1]
    }

    pub fn r_next(&self) -> usize {
        self.mean.shape().dims()[2]
    }

    /// vec(Z_n(i_n)) of the mean, column-major over the R_{n-1} x R_n slice.
    pub fn slice_mean_vec(&self, i: usize) -> DVector<f64> {
        let (r0, im, r1) = (self.r_prev(), self.mode_dim(), self.r_next());
        let data = self.mean.data();
        DVector::from_fn(r0 * r1, |p, _| {
            let a = p % r0;
            let b = p / r0;
            data[a + r0 * (i + im * b)]
        })
    }

    pub fn slice_mean_mat(&self, i: usize) -> DMatrix<f64> {
        crate::tr::lateral_slice(&self.mean, i)
    }

    pub fn set_slice(&mut self, i: usize, mean_vec: &DVector<f64>, cov: DMatrix<f64>) {
        let (r0, im, r1) = (self.r_prev(), self.mode_dim(), self.r_next());
        let data = self.mean.data_mut();
        for b in 0..r1 {
            for a in 0..r0 {
                data[a + r0 * (i + im * b)] = mean_vec[a + r0 * b];
            }
        }
        self.slice_cov[i] = cov;
    }
}

/// Gamma posterior over one ARD precision vector u^(n).
#[derive(Debug, Clone)]
pub struct ArdPosterior {
    pub c_tilde: Vec<f64>,
    pub d_tilde: Vec<f64>,
}

impl ArdPosterior {
    pub fn expected(&self) -> Vec<f64> {
        self.c_tilde.iter().zip(&self.d_tilde).map(|(c, d)| c / d).collect()
    }
}

/// Gaussian posterior over the sparse component; defined on the observed
/// support, zero mean elsewhere.
#[derive(Debug, Clone)]
pub struct SparsePosterior {
    pub mean: DenseTensor,
    pub var: DenseTensor,
}

/// Per-entry Gamma posterior over the sparse precisions.
#[derive(Debug, Clone)]
pub struct EtaPosterior {
    pub a: DenseTensor,
    pub b: DenseTensor,
}

/// Gamma posterior over the dense noise precision.
#[derive(Debug, Clone, Copy)]
pub struct TauPosterior {
    pub a: f64,
    pub b: f64,
}

impl TauPosterior {
    pub fn expected(&self) -> f64 {
        self.a / self.b
    }
}

/// All variational factors plus the bookkeeping the updates need.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    pub cores: Vec<CorePosterior>,
    pub ard: Vec<ArdPosterior>,
    pub sparse: SparsePosterior,
    pub eta: EtaPosterior,
    pub tau: TauPosterior,
    pub hyper: Hyperpriors,
    pub ranks: TRRank,
    pub moment_mode: MomentMode,
    /// Count of jittered precision factorizations (numerical fallback).
    pub jitter_events: u64,
}

impl PosteriorState {
    pub fn n_modes(&self) -> usize {
        self.cores.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.mode_dim()).collect()
    }

    pub fn data_shape(&self) -> Result<Shape> {
        Shape::new(self.dims())
    }

    /// The core means as a TR factorization.
    pub fn mean_cores(&self) -> Result<TRCores> {
        TRCores::new(self.cores.iter().map(|c| c.mean.clone()).collect())
    }

    /// E[u^(n)] for ring position n (1-based, 1..=N).
    pub fn expected_u(&self, n: usize) -> Vec<f64> {
        self.ard[n - 1].expected()
    }

    /// E[u^(n-1)] for core n, wrapping position 0 to position N.
    pub fn expected_u_prev(&self, n: usize) -> Vec<f64> {
        let nm = self.n_modes();
        let pos = if n == 1 { nm } else { n - 1 };
        self.expected_u(pos)
    }

    /// Structural consistency: every core shape matches the rank chain.
    pub fn check_rank_chain(&self) -> Result<()> {
        let nm = self.n_modes();
        for n in 0..nm {
            let c = &self.cores[n];
            let (r0, r1) = (self.ranks.ranks()[n], self.ranks.ranks()[n + 1]);
            if c.r_prev() != r0 || c.r_next() != r1 {
                return Err(Error::ShapeMismatch(format!(
                    "core {} has ranks ({}, {}), rank vector says ({}, {})",
                    n + 1,
                    c.r_prev(),
                    c.r_next(),
                    r0,
                    r1
                )));
            }
            if self.ard[n].c_tilde.len() != r1 || self.ard[n].d_tilde.len() != r1 {
                return Err(Error::ShapeMismatch(format!(
                    "ARD factor {} length mismatch with rank {}",
                    n + 1,
                    r1
                )));
            }
            if c.slice_cov.len() != c.mode_dim() {
                return Err(Error::ShapeMismatch(format!("core {} covariance count mismatch", n + 1)));
            }
        }
        Ok(())
    }
}

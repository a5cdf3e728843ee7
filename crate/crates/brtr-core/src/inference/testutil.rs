//! Shared helpers for inference tests (unit and integration); not public API.

use super::{
    ArdPosterior, CorePosterior, EtaPosterior, Hyperpriors, MomentMode, PosteriorState,
    SparsePosterior, TauPosterior,
};
use crate::tensor::{DenseTensor, Shape};
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Build a state with random core means and given covariance scale.
pub fn random_state(
    dims: &[usize],
    ranks: &[usize],
    cov_scale: f64,
    seed: u64,
    mode: MomentMode,
) -> PosteriorState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nm = dims.len();
    let cores: Vec<CorePosterior> = (0..nm)
        .map(|k| {
            let shape = Shape::new(vec![ranks[k], dims[k], ranks[k + 1]]).unwrap();
            let data: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d = ranks[k] * ranks[k + 1];
            let slice_cov = (0..dims[k])
                .map(|_| {
                    if cov_scale == 0.0 {
                        DMatrix::zeros(d, d)
                    } else {
                        // random SPD: A A^T scaled
                        let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
                        &a * a.transpose() * cov_scale + DMatrix::identity(d, d) * 1e-3
                    }
                })
                .collect();
            CorePosterior { mean: DenseTensor::new(shape, data).unwrap(), slice_cov }
        })
        .collect();
    let shape = Shape::new(dims.to_vec()).unwrap();
    PosteriorState {
        ard: (0..nm)
            .map(|k| ArdPosterior {
                c_tilde: vec![1.0; ranks[k + 1]],
                d_tilde: vec![1.0; ranks[k + 1]],
            })
            .collect(),
        cores,
        sparse: SparsePosterior {
            mean: DenseTensor::zeros(shape.clone()),
            var: DenseTensor::filled(shape.clone(), 1.0),
        },
        eta: EtaPosterior {
            a: DenseTensor::filled(shape.clone(), 1.0),
            b: DenseTensor::filled(shape.clone(), 1.0),
        },
        tau: TauPosterior { a: 1.0, b: 1.0 },
        hyper: Hyperpriors::default(),
        ranks: crate::tr::TRRank::new(ranks.to_vec()).unwrap(),
        moment_mode: mode,
        jitter_events: 0,
    }
}

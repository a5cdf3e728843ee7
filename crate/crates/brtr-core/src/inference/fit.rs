//! The outer coordinate-ascent loop.

use super::{
    elbo, initialize, prune, update_ard, update_core, update_eta, update_sparse, update_tau,
    InferenceConfig, PosteriorState,
};
use crate::error::Result;
use crate::tensor::{DenseTensor, IndexMask};
use crate::tr::tr_full;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// What a fit did, for reporting and convergence diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    /// Bound value after each sweep.
    pub elbo_trace: Vec<f64>,
    /// Ring ranks (R_0..R_N) at the end.
    pub final_ranks: Vec<usize>,
    pub iterations: usize,
    /// Rank components removed at each sweep.
    pub pruned_per_iteration: Vec<usize>,
    pub wall_seconds: f64,
    pub jitter_events: u64,
    pub converged: bool,
}

/// Run the full inference: initialize, sweep all coordinate updates until the
/// bound stabilizes (and no pruning happened in the final sweep) or the sweep
/// budget runs out.
pub fn fit(
    y: &DenseTensor,
    mask: &IndexMask,
    config: &InferenceConfig,
) -> Result<(PosteriorState, RunReport)> {
    let started = Instant::now();
    let mut state = initialize(y, mask, config)?;
    let nm = state.n_modes();
    let mut trace = Vec::new();
    let mut pruned = Vec::new();
    let mut prev: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iters {
        iterations = it;
        for n in 1..=nm {
            update_core(&mut state, y, mask, n)?;
        }
        for n in 1..=nm {
            update_ard(&mut state, n)?;
        }
        // the sparse factor stays frozen at zero during warmup so the ring
        // factors claim the signal first; it then picks up what they cannot fit
        if it > config.sparse_warmup {
            update_sparse(&mut state, y, mask)?;
            update_eta(&mut state, mask)?;
        }
        update_tau(&mut state, y, mask)?;
        // pruning changes the model; hold off until the factors have settled
        let removed = if it > 2 { prune(&mut state, config.prune_threshold)? } else { 0 };
        let bound = elbo(&state, y, mask)?;
        trace.push(bound);
        pruned.push(removed);
        if let Some(p) = prev {
            let rel = (bound - p).abs() / p.abs().max(1.0);
            if rel < config.elbo_rel_tol && removed == 0 && it > config.sparse_warmup + 1 {
                converged = true;
                break;
            }
        }
        prev = Some(bound);
    }

    let report = RunReport {
        elbo_trace: trace,
        final_ranks: state.ranks.ranks().to_vec(),
        iterations,
        pruned_per_iteration: pruned,
        wall_seconds: started.elapsed().as_secs_f64(),
        jitter_events: state.jitter_events,
        converged,
    };
    Ok((state, report))
}

/// Posterior-mean low-rank reconstruction.
pub fn predict(state: &PosteriorState) -> Result<DenseTensor> {
    tr_full(&state.mean_cores()?)
}

//! Evaluation metrics: relative error, PSNR, rank estimation error and
//! missing/sparse ratios.

use crate::error::{Error, Result};
use crate::tensor::{frobenius_norm, DenseTensor, IndexMask};
use crate::tr::TRRank;

/// Relative standard error ||est - truth||_F / ||truth||_F.
pub fn rse(est: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    if est.shape() != truth.shape() {
        return Err(Error::ShapeMismatch("rse operands differ in shape".into()));
    }
    let denom = frobenius_norm(truth);
    if denom == 0.0 {
        return Err(Error::InvalidArgument("rse undefined for zero-norm truth".into()));
    }
    let diff: f64 = est
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff.sqrt() / denom)
}

/// Peak signal-to-noise ratio in decibels; +inf for a perfect reconstruction.
pub fn psnr(est: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    if est.shape() != truth.shape() {
        return Err(Error::ShapeMismatch("psnr operands differ in shape".into()));
    }
    let n = truth.shape().len() as f64;
    let mse: f64 = est
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = truth.data().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Rank estimation error: mean absolute deviation over ring positions 1..N
/// (R_0 is the same position as R_N and is not double counted).
pub fn ree(est_rank: &TRRank, true_rank: &TRRank) -> Result<f64> {
    if est_rank.n_modes() != true_rank.n_modes() {
        return Err(Error::ShapeMismatch("rank vectors differ in length".into()));
    }
    let n = est_rank.n_modes();
    let sum: f64 = (1..=n)
        .map(|k| (est_rank.ranks()[k] as f64 - true_rank.ranks()[k] as f64).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Missing ratio: missing entries / total entries.
pub fn mr_of(mask: &IndexMask) -> f64 {
    let total = mask.shape().len();
    let observed = mask.observed_count();
    (total - observed) as f64 / total as f64
}

/// Sparse ratio: corrupted observed entries / |O|.
pub fn sr_of(sparse_support_count: usize, mask: &IndexMask) -> Result<f64> {
    let observed = mask.observed_count();
    if observed == 0 {
        return Err(Error::EmptyObservations);
    }
    Ok(sparse_support_count as f64 / observed as f64)
}

use serde::Serialize;

use crate::autodiff::{Tensor, Var};
use crate::model::{BoundParams, PredictionSet};
use crate::scalar::Scalar;
use crate::training::{ade, arbitrate, TrainError, WinnerSelection};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossBreakdown<T> {
    pub classification: T,
    pub regression: T,
    pub total: T,
    pub winner: WinnerSelection<T>,
}

/// `-ln p` of the winning candidate.
pub fn classification_loss<T: Scalar>(probabilities: &[T], winner: &WinnerSelection<T>, motion_modes: usize) -> T {
    -probabilities[winner.intention * motion_modes + winner.motion].ln()
}

/// Arbitrates, then adds `alpha` times the winner's ADE to its
/// classification loss.
pub fn total_loss<T: Scalar>(set: &PredictionSet<T>, ground_truth: &[[T; 2]], alpha: T) -> Result<LossBreakdown<T>, TrainError> {
    let winner = arbitrate(set, ground_truth)?;
    let classification = classification_loss(&set.probabilities, &winner, set.motion_modes);
    let regression = ade(set.trajectory(winner.intention, winner.motion), ground_truth)?;
    Ok(LossBreakdown {
        classification,
        regression,
        total: classification + alpha * regression,
        winner,
    })
}

/// Loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars<'t, T> {
    pub classification: Var<'t, T>,
    pub regression: Var<'t, T>,
    pub total: Var<'t, T>,
}

/// Tape form of the total loss for a fixed winner row.
///
/// `positions` is `candidates x 2H` and `log_probs` is `1 x candidates`.
/// Only row `winner` of `positions` enters the graph, so every other row
/// receives an exactly zero gradient.
pub fn winner_loss<'t, T: Scalar>(
    positions: Var<'t, T>,
    log_probs: Var<'t, T>,
    winner: usize,
    ground_truth: &[[T; 2]],
    alpha: T,
) -> Result<LossVars<'t, T>, TrainError> {
    let tape = positions.tape();
    let h = ground_truth.len();
    if positions.shape()[1] != 2 * h {
        return Err(TrainError::LengthMismatch {
            expected: positions.shape()[1] / 2,
            found: h,
        });
    }
    let truth = tape.constant(Tensor::new(vec![h, 2], ground_truth.iter().flatten().copied().collect())?);
    let row = positions.slice(0, winner, winner + 1)?.reshape(&[h, 2])?;
    let regression = row.sub(truth)?.norm().mean();
    let classification = log_probs.slice(1, winner, winner + 1)?.reshape(&[1])?.neg();
    let total = classification.add(regression.scale(alpha))?;
    Ok(LossVars {
        classification,
        regression,
        total,
    })
}

/// Forward pass, arbitration on the forward values, and the winner loss.
pub fn sample_loss<'t, T: Scalar>(
    bound: &BoundParams<'t, T>,
    sample: &crate::data::Sample,
    alpha: T,
) -> Result<(LossVars<'t, T>, WinnerSelection<T>), TrainError> {
    let forward = bound.forward(sample)?;
    let set = forward.prediction_set();
    let truth: Vec<[T; 2]> = sample.future.iter().map(|p| [T::of(p[0]), T::of(p[1])]).collect();
    let winner = arbitrate(&set, &truth)?;
    let index = set.index(winner.intention, winner.motion);
    let loss = winner_loss(forward.positions, forward.log_probs, index, &truth, alpha)?;
    Ok((loss, winner))
}

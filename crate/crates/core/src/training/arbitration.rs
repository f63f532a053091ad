use serde::Serialize;

use crate::model::PredictionSet;
use crate::scalar::Scalar;
use crate::training::TrainError;

/// Arbitrated winner `(m*, n*)` and the criteria that selected it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WinnerSelection<T> {
    pub intention: usize,
    pub motion: usize,
    /// Per group: summed absolute lateral deviation of the final points.
    pub intention_criteria: Vec<T>,
    /// Per motion mode of the winning group: ADE to the ground truth.
    pub motion_criteria: Vec<T>,
}

/// Index of the smallest value; the lowest index wins ties.
pub fn argmin<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Mean Euclidean distance between corresponding points.
pub fn ade<T: Scalar>(trajectory: &[[T; 2]], ground_truth: &[[T; 2]]) -> Result<T, TrainError> {
    if trajectory.len() != ground_truth.len() || trajectory.is_empty() {
        return Err(TrainError::LengthMismatch {
            expected: ground_truth.len(),
            found: trajectory.len(),
        });
    }
    let total: T = trajectory
        .iter()
        .zip(ground_truth)
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        .sum();
    Ok(total / T::of(trajectory.len() as f64))
}

fn check_horizon<T: Scalar>(set: &PredictionSet<T>, ground_truth: &[[T; 2]]) -> Result<(), TrainError> {
    if ground_truth.len() != set.horizon || ground_truth.is_empty() {
        return Err(TrainError::LengthMismatch {
            expected: set.horizon,
            found: ground_truth.len(),
        });
    }
    Ok(())
}

/// Intention group whose final points deviate least laterally, summed over
/// the group's motion modes.
pub fn select_intention<T: Scalar>(set: &PredictionSet<T>, ground_truth: &[[T; 2]]) -> Result<(usize, Vec<T>), TrainError> {
    check_horizon(set, ground_truth)?;
    let target = ground_truth[ground_truth.len() - 1][0];
    let criteria: Vec<T> = (0..set.intention_modes)
        .map(|m| {
            (0..set.motion_modes)
                .map(|n| (set.trajectory(m, n)[set.horizon - 1][0] - target).abs())
                .sum()
        })
        .collect();
    Ok((argmin(&criteria), criteria))
}

/// Motion mode of group `intention` with the smallest ADE.
pub fn select_motion<T: Scalar>(
    set: &PredictionSet<T>,
    intention: usize,
    ground_truth: &[[T; 2]],
) -> Result<(usize, Vec<T>), TrainError> {
    check_horizon(set, ground_truth)?;
    let criteria = (0..set.motion_modes)
        .map(|n| ade(set.trajectory(intention, n), ground_truth))
        .collect::<Result<Vec<T>, _>>()?;
    Ok((argmin(&criteria), criteria))
}

/// Two-phase arbitration: intention first, then motion within that group.
pub fn arbitrate<T: Scalar>(set: &PredictionSet<T>, ground_truth: &[[T; 2]]) -> Result<WinnerSelection<T>, TrainError> {
    let (intention, intention_criteria) = select_intention(set, ground_truth)?;
    let (motion, motion_criteria) = select_motion(set, intention, ground_truth)?;
    Ok(WinnerSelection {
        intention,
        motion,
        intention_criteria,
        motion_criteria,
    })
}

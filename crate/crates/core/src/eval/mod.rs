//! Horizon metrics (thresholded minRMSE, RMSE, ADE/FDE) and the
//! intention-specialization report.
//!
//! Horizons are whole seconds up to the prediction length. Squared errors
//! are sorted before summation, so every metric is exactly invariant under
//! reordering of the evaluated samples.

mod report;

pub use report::{format_table, sample_records, SampleRecord};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Intention, Point, Sample};
use crate::model::{ModelError, ModelParams, PredictionSet};
use crate::scalar::Scalar;
use crate::training::{ade, arbitrate, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("threshold {0} outside [0, 1)")]
    Threshold(f64),
    #[error("case {case}: ground truth has {found} points, prediction has {expected}")]
    LengthMismatch { case: usize, expected: usize, found: usize },
    #[error("case {case} has no intention label")]
    Unlabeled { case: usize },
    #[error("prediction horizon shorter than one second")]
    NoHorizon,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(Box::new(e))
    }
}

/// One sample's predictions next to its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCase {
    pub id: String,
    pub prediction: PredictionSet<f64>,
    pub ground_truth: Vec<Point>,
    pub label: Option<Intention>,
}

/// How minRMSE picks among admissible candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinMode {
    /// Independent minimum at every horizon.
    #[default]
    PerHorizon,
    /// One candidate per sample: the admissible one with the lowest ADE.
    PerTrajectory,
}

impl fmt::Display for MinMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MinMode::PerHorizon => "per-horizon",
            MinMode::PerTrajectory => "per-trajectory",
        })
    }
}

impl FromStr for MinMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-horizon" => Ok(MinMode::PerHorizon),
            "per-trajectory" => Ok(MinMode::PerTrajectory),
            other => Err(format!("unknown minimization mode `{other}` (per-horizon, per-trajectory)")),
        }
    }
}

/// A metric in meters at each whole-second horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub metric_name: String,
    pub per_second: BTreeMap<u32, f64>,
    pub sample_count: usize,
}

impl HorizonMetrics {
    pub fn at(&self, second: u32) -> Option<f64> {
        self.per_second.get(&second).copied()
    }
}

/// Predicts every sample and pairs it with its ground truth.
pub fn predict_cases<T: Scalar>(params: &ModelParams<T>, samples: &[Sample]) -> Result<Vec<EvalCase>, ModelError> {
    samples
        .iter()
        .map(|s| {
            let p = params.predict(s)?;
            Ok(EvalCase {
                id: format!("{}:{}@{}", s.source, s.target_id, s.anchor_frame),
                prediction: to_f64(p),
                ground_truth: s.future.clone(),
                label: s.intention,
            })
        })
        .collect()
}

fn to_f64<T: Scalar>(p: PredictionSet<T>) -> PredictionSet<f64> {
    PredictionSet {
        intention_modes: p.intention_modes,
        motion_modes: p.motion_modes,
        horizon: p.horizon,
        time_step: p.time_step,
        trajectories: p
            .trajectories
            .into_iter()
            .map(|t| t.into_iter().map(|q| [q[0].as_f64(), q[1].as_f64()]).collect())
            .collect(),
        probabilities: p.probabilities.into_iter().map(Scalar::as_f64).collect(),
    }
}

/// `(second, step index)` for every whole second within the horizon.
pub fn horizon_steps(horizon: usize, time_step: f64) -> Vec<(u32, usize)> {
    (1u32..)
        .map(|s| (s, (s as f64 / time_step).round() as usize))
        .take_while(|&(_, steps)| steps <= horizon)
        .filter(|&(_, steps)| steps >= 1)
        .map(|(s, steps)| (s, steps - 1))
        .collect()
}

/// Candidates with probability above `threshold`, or the most probable one
/// when none is.
pub fn admissible(set: &PredictionSet<f64>, threshold: f64) -> Vec<usize> {
    let above: Vec<usize> = (0..set.candidates()).filter(|&i| set.probabilities[i] > threshold).collect();
    if above.is_empty() {
        vec![set.most_probable()]
    } else {
        above
    }
}

fn squared_error(p: [f64; 2], q: Point) -> f64 {
    let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
    dx * dx + dy * dy
}

fn check_cases(cases: &[EvalCase]) -> Result<Vec<(u32, usize)>, EvalError> {
    let first = cases.first().ok_or(EvalError::Empty)?;
    for (i, c) in cases.iter().enumerate() {
        if c.ground_truth.len() != c.prediction.horizon {
            return Err(EvalError::LengthMismatch {
                case: i,
                expected: c.prediction.horizon,
                found: c.ground_truth.len(),
            });
        }
    }
    let steps = horizon_steps(first.prediction.horizon, first.prediction.time_step);
    if steps.is_empty() {
        return Err(EvalError::NoHorizon);
    }
    Ok(steps)
}

/// Square root of the mean of `per_case(case, step)` at every horizon.
fn aggregate(
    name: &str,
    cases: &[EvalCase],
    steps: &[(u32, usize)],
    per_case: impl Fn(usize, &EvalCase, usize) -> f64,
) -> HorizonMetrics {
    let mut per_second = BTreeMap::new();
    for &(second, step) in steps {
        let mut errors: Vec<f64> = cases.iter().enumerate().map(|(i, c)| per_case(i, c, step)).collect();
        errors.sort_by(f64::total_cmp);
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        per_second.insert(second, mean.sqrt());
    }
    HorizonMetrics {
        metric_name: name.to_string(),
        per_second,
        sample_count: cases.len(),
    }
}

/// Thresholded minRMSE.
pub fn min_rmse(cases: &[EvalCase], threshold: f64, mode: MinMode) -> Result<HorizonMetrics, EvalError> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(EvalError::Threshold(threshold));
    }
    let steps = check_cases(cases)?;
    let chosen: Vec<Vec<usize>> = cases
        .iter()
        .map(|c| {
            let cands = admissible(&c.prediction, threshold);
            match mode {
                MinMode::PerHorizon => Ok(cands),
                MinMode::PerTrajectory => {
                    let ades = cands
                        .iter()
                        .map(|&i| ade(&c.prediction.trajectories[i], &c.ground_truth))
                        .collect::<Result<Vec<f64>, _>>()?;
                    Ok(vec![cands[crate::training::argmin(&ades)]])
                }
            }
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(aggregate("minRMSE", cases, &steps, |i, c, step| {
        chosen[i]
            .iter()
            .map(|&i| squared_error(c.prediction.trajectories[i][step], c.ground_truth[step]))
            .fold(f64::INFINITY, f64::min)
    }))
}

/// RMSE of the most probable candidate.
pub fn rmse(cases: &[EvalCase]) -> Result<HorizonMetrics, EvalError> {
    let steps = check_cases(cases)?;
    Ok(aggregate("RMSE", cases, &steps, |_, c, step| {
        let best = c.prediction.most_probable();
        squared_error(c.prediction.trajectories[best][step], c.ground_truth[step])
    }))
}

/// Mean displacement errors over all samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementMetrics {
    /// ADE of the most probable candidate.
    pub ade: f64,
    /// Final displacement error of the most probable candidate.
    pub fde: f64,
    /// Lowest ADE over all candidates.
    pub min_ade: f64,
    /// Lowest final displacement error over all candidates.
    pub min_fde: f64,
}

pub fn displacement_metrics(cases: &[EvalCase]) -> Result<DisplacementMetrics, EvalError> {
    check_cases(cases)?;
    let mean = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (mut a, mut f, mut ma, mut mf) = (vec![], vec![], vec![], vec![]);
    for c in cases {
        let gt = &c.ground_truth;
        let last = gt[gt.len() - 1];
        let ades = c
            .prediction
            .trajectories
            .iter()
            .map(|t| ade(t, gt))
            .collect::<Result<Vec<f64>, _>>()?;
        let fdes: Vec<f64> = c.prediction.trajectories.iter().map(|t| squared_error(t[t.len() - 1], last).sqrt()).collect();
        let best = c.prediction.most_probable();
        a.push(ades[best]);
        f.push(fdes[best]);
        ma.push(ades.iter().copied().fold(f64::INFINITY, f64::min));
        mf.push(fdes.iter().copied().fold(f64::INFINITY, f64::min));
    }
    Ok(DisplacementMetrics {
        ade: mean(a),
        fde: mean(f),
        min_ade: mean(ma),
        min_fde: mean(mf),
    })
}

/// Which intention group wins arbitration for which true label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecializationReport {
    /// Column labels of `win_counts`.
    pub labels: Vec<Intention>,
    /// `win_counts[m][l]`: samples with label `l` won by group `m`.
    pub win_counts: Vec<Vec<usize>>,
    /// Share of each group's wins from its most frequent label; 0 for a
    /// group that never wins.
    pub purity: Vec<f64>,
    /// Per label, the group holding a strict majority of its samples.
    pub owners: Vec<Option<usize>>,
    /// Fraction of present labels that have an owner.
    pub coverage: f64,
    pub sample_count: usize,
}

impl SpecializationReport {
    /// Every label is owned, each by a different group.
    pub fn distinct_owners(&self) -> bool {
        let owned: Vec<usize> = self.owners.iter().flatten().copied().collect();
        let mut unique = owned.clone();
        unique.sort_unstable();
        unique.dedup();
        owned.len() == self.owners.len() && unique.len() == owned.len()
    }
}

pub fn specialization_report(cases: &[EvalCase]) -> Result<SpecializationReport, EvalError> {
    let first = cases.first().ok_or(EvalError::Empty)?;
    let groups = first.prediction.intention_modes;
    let labels = Intention::ALL.to_vec();
    let mut win_counts = vec![vec![0usize; labels.len()]; groups];
    for (i, c) in cases.iter().enumerate() {
        let label = c.label.ok_or(EvalError::Unlabeled { case: i })?;
        let winner = arbitrate(&c.prediction, &c.ground_truth)?;
        win_counts[winner.intention][label.index()] += 1;
    }
    let purity = win_counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                *row.iter().max().expect("labels") as f64 / total as f64
            }
        })
        .collect();
    let mut owners = Vec::with_capacity(labels.len());
    let mut present = 0;
    for l in 0..labels.len() {
        let column: Vec<usize> = win_counts.iter().map(|r| r[l]).collect();
        let total: usize = column.iter().sum();
        if total > 0 {
            present += 1;
        }
        let best = (0..groups).max_by_key(|&m| (column[m], std::cmp::Reverse(m))).expect("groups");
        owners.push((2 * column[best] > total).then_some(best));
    }
    let coverage = if present == 0 {
        0.0
    } else {
        owners.iter().flatten().count() as f64 / present as f64
    };
    Ok(SpecializationReport {
        labels,
        win_counts,
        purity,
        owners,
        coverage,
        sample_count: cases.len(),
    })
}

//! Winner-take-gradient training: two-phase arbitration, the combined loss,
//! Adam and the epoch loop.

mod adam;
mod arbitration;
mod loss;

pub use adam::{clip_global_norm, OptimizerState};
pub use arbitration::{ade, arbitrate, argmin, select_intention, select_motion, WinnerSelection};
pub use loss::{classification_loss, sample_loss, total_loss, winner_loss, LossBreakdown, LossVars};

use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::data::Sample;
use crate::eval::{self, EvalError, MinMode};
use crate::model::{ModelError, ModelParams};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("trajectory has {found} points, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite loss on sample {sample}: classification {classification}, regression {regression}")]
    NonFinite {
        sample: String,
        classification: f64,
        regression: f64,
    },
    #[error("non-finite gradient (norm {norm})")]
    NonFiniteGradient { norm: f64 },
    #[error("validation: {0}")]
    Eval(#[from] Box<EvalError>),
}

impl TrainError {
    /// True for failures caused by numerics rather than inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, TrainError::NonFinite { .. } | TrainError::NonFiniteGradient { .. })
    }
}

fn sample_name(s: &Sample) -> String {
    format!("{}:{}@{}", s.source, s.target_id, s.anchor_frame)
}

/// Gradient of one sample's total loss, in parameter order, with its loss.
pub fn sample_gradients<T: Scalar>(
    params: &ModelParams<T>,
    sample: &Sample,
) -> Result<(Vec<Tensor<T>>, LossBreakdown<T>), TrainError> {
    let tape = Tape::new();
    let bound = params.bind(&tape, true);
    let (loss, winner) = sample_loss(&bound, sample, T::of(params.config.alpha))?;
    let item = |v: crate::autodiff::Var<'_, T>| v.item().expect("scalar loss");
    let breakdown = LossBreakdown {
        classification: item(loss.classification),
        regression: item(loss.regression),
        total: item(loss.total),
        winner,
    };
    if !breakdown.total.is_finite() {
        return Err(TrainError::NonFinite {
            sample: sample_name(sample),
            classification: breakdown.classification.as_f64(),
            regression: breakdown.regression.as_f64(),
        });
    }
    let mut grads = loss.total.backward()?;
    let tensors = bound
        .vars()
        .iter()
        .map(|&v| grads.take(v).expect("parameters are trainable leaves"))
        .collect();
    Ok((tensors, breakdown))
}

/// Batch means of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub classification: f64,
    pub regression: f64,
    pub total: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Mean gradient over `batch` (summed in batch order), without updating.
pub fn batch_gradients<T: Scalar>(params: &ModelParams<T>, batch: &[&Sample]) -> Result<(Vec<Tensor<T>>, StepLoss), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut sum: Option<Vec<Tensor<T>>> = None;
    let mut loss = StepLoss::default();
    for sample in batch {
        let (grads, b) = sample_gradients(params, sample)?;
        loss.classification += b.classification.as_f64();
        loss.regression += b.regression.as_f64();
        loss.total += b.total.as_f64();
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(x, &y)| *x += y);
                }
            }
        }
    }
    let count = batch.len() as f64;
    let scale = T::one() / T::of(count);
    let mut grads = sum.expect("non-empty batch");
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    loss.classification /= count;
    loss.regression /= count;
    loss.total /= count;
    Ok((grads, loss))
}

/// One optimizer step on the mean loss of `batch`.
pub fn train_step<T: Scalar>(
    params: &mut ModelParams<T>,
    batch: &[&Sample],
    optimizer: &mut OptimizerState<T>,
) -> Result<StepLoss, TrainError> {
    let (mut grads, mut loss) = batch_gradients(params, batch)?;
    let norm = clip_global_norm(&mut grads, T::of(params.config.grad_clip));
    loss.grad_norm = norm.as_f64();
    if !norm.is_finite() {
        return Err(TrainError::NonFiniteGradient { norm: norm.as_f64() });
    }
    optimizer.update(&mut params.tensors_mut(), &grads);
    Ok(loss)
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_class_loss: f64,
    pub mean_reg_loss: f64,
    pub mean_total: f64,
    /// Validation minRMSE by horizon second; empty without a validation set.
    pub val_min_rmse: BTreeMap<u32, f64>,
}

pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub optimizer: OptimizerState<T>,
    pub log: Vec<EpochMetrics>,
}

/// Validation minRMSE with the config's threshold, per-horizon mode.
pub fn validation_min_rmse<T: Scalar>(params: &ModelParams<T>, validation: &[Sample]) -> Result<BTreeMap<u32, f64>, TrainError> {
    if validation.is_empty() {
        return Ok(BTreeMap::new());
    }
    let cases = eval::predict_cases(params, validation)?;
    let metrics = eval::min_rmse(&cases, params.config.probability_threshold, MinMode::PerHorizon).map_err(Box::new)?;
    Ok(metrics.per_second)
}

/// Runs `params.config.epochs` epochs of shuffled mini-batch training.
///
/// The shuffle order comes from the shuffle stream of the config seed.
/// `on_epoch` sees each epoch's metrics and the parameters after it.
pub fn train<T: Scalar>(
    mut params: ModelParams<T>,
    train_set: &[Sample],
    validation: &[Sample],
    mut on_epoch: impl FnMut(&EpochMetrics, &ModelParams<T>),
) -> Result<TrainOutcome<T>, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let config = params.config.clone();
    let shapes: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut optimizer = OptimizerState::new(&config, &shape_refs);
    let mut rng = stream_rng(config.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let batch_size = config.batch_size.max(1);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut class, mut reg, mut total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = train_step(&mut params, &batch, &mut optimizer)?;
            let w = chunk.len() as f64;
            class += loss.classification * w;
            reg += loss.regression * w;
            total += loss.total * w;
        }
        let n = train_set.len() as f64;
        let metrics = EpochMetrics {
            epoch,
            mean_class_loss: class / n,
            mean_reg_loss: reg / n,
            mean_total: total / n,
            val_min_rmse: validation_min_rmse(&params, validation)?,
        };
        info!(
            "epoch {epoch}: loss {:.4} (class {:.4}, reg {:.4}), val minRMSE {:?}",
            metrics.mean_total, metrics.mean_class_loss, metrics.mean_reg_loss, metrics.val_min_rmse
        );
        on_epoch(&metrics, &params);
        log.push(metrics);
    }
    Ok(TrainOutcome { params, optimizer, log })
}

#[cfg(test)]
mod tests;

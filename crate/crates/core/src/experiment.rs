//! Train-then-evaluate runs and one-parameter sweeps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, TrainConfig};
use crate::data::Sample;
use crate::eval::{self, HorizonMetrics, MinMode, SpecializationReport};
use crate::model::ModelParams;
use crate::training::{self, EpochMetrics, TrainError};

/// Test-set metrics of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub min_rmse: HorizonMetrics,
    pub rmse: HorizonMetrics,
    /// Present when every test sample is labeled.
    pub specialization: Option<SpecializationReport>,
}

pub fn evaluate(
    params: &ModelParams<f64>,
    samples: &[Sample],
    threshold: f64,
    mode: MinMode,
) -> Result<TestMetrics, TrainError> {
    let cases = eval::predict_cases(params, samples)?;
    let labeled = !cases.is_empty() && cases.iter().all(|c| c.label.is_some());
    Ok(TestMetrics {
        min_rmse: eval::min_rmse(&cases, threshold, mode)?,
        rmse: eval::rmse(&cases)?,
        specialization: if labeled {
            Some(eval::specialization_report(&cases)?)
        } else {
            None
        },
    })
}

pub struct ExperimentResult {
    pub params: ModelParams<f64>,
    pub log: Vec<EpochMetrics>,
    pub test: TestMetrics,
}

/// Initializes from `config`, trains, and evaluates on `test`.
pub fn run_experiment(
    config: &TrainConfig,
    train: &[Sample],
    validation: &[Sample],
    test: &[Sample],
) -> Result<ExperimentResult, TrainError> {
    let params = ModelParams::init(config)?;
    let outcome = training::train(params, train, validation, |_, _| {})?;
    let test = evaluate(&outcome.params, test, config.probability_threshold, MinMode::PerHorizon)?;
    Ok(ExperimentResult {
        params: outcome.params,
        log: outcome.log,
        test,
    })
}

/// Hyperparameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVar {
    M,
    N,
    #[serde(rename = "alpha")]
    Alpha,
}

impl fmt::Display for SweepVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVar::M => "M",
            SweepVar::N => "N",
            SweepVar::Alpha => "alpha",
        })
    }
}

impl FromStr for SweepVar {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "M" => Ok(SweepVar::M),
            "N" => Ok(SweepVar::N),
            "alpha" => Ok(SweepVar::Alpha),
            other => Err(format!("cannot sweep `{other}` (M, N, alpha)")),
        }
    }
}

impl SweepVar {
    /// `base` with this variable set to `value`.
    pub fn apply(self, base: &TrainConfig, value: f64) -> Result<TrainConfig, ConfigError> {
        let mut config = base.clone();
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(ConfigError::Invalid(format!("{self} must be a positive integer, got {value}")))
            }
        };
        match self {
            SweepVar::M => config.intention_modes = count()?,
            SweepVar::N => config.motion_modes = count()?,
            SweepVar::Alpha => config.alpha = value,
        }
        config.validate()?;
        Ok(config)
    }
}

/// One point of a sweep curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub vary: SweepVar,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_rmse: Option<HorizonMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<HorizonMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Trains one model per value with the shared seed. Failed runs are
/// recorded and the sweep continues.
pub fn sweep(
    base: &TrainConfig,
    vary: SweepVar,
    values: &[f64],
    train: &[Sample],
    validation: &[Sample],
    test: &[Sample],
    mut on_result: impl FnMut(&SweepRecord, Option<&ExperimentResult>),
) -> Vec<SweepRecord> {
    values
        .iter()
        .map(|&value| {
            let result = vary
                .apply(base, value)
                .map_err(|e| e.to_string())
                .and_then(|c| run_experiment(&c, train, validation, test).map_err(|e| e.to_string()));
            let record = match &result {
                Ok(r) => SweepRecord {
                    vary,
                    value,
                    min_rmse: Some(r.test.min_rmse.clone()),
                    rmse: Some(r.test.rmse.clone()),
                    error: None,
                },
                Err(e) => SweepRecord {
                    vary,
                    value,
                    min_rmse: None,
                    rmse: None,
                    error: Some(e.clone()),
                },
            };
            on_result(&record, result.as_ref().ok());
            record
        })
        .collect()
}

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{DataError, Sample};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
}

/// Accepts finite, non-negative `[train, validation, test]` shares that sum
/// to 1 (within 1e-9) and give train a positive share.
pub fn validate_ratios(ratios: [f64; 3]) -> Result<(), DataError> {
    let sum: f64 = ratios.iter().sum();
    let ok = ratios.iter().all(|r| r.is_finite() && *r >= 0.0) && ratios[0] > 0.0 && (sum - 1.0).abs() <= 1e-9;
    if ok {
        Ok(())
    } else {
        Err(DataError::InvalidRatios(ratios.to_vec()))
    }
}

/// Seeded shuffle followed by a contiguous cut.
///
/// Sizes are `round(r0 n)` for train and `round((r0 + r1) n) - round(r0 n)`
/// for validation; the rest is test.
pub fn split(samples: Vec<Sample>, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit, DataError> {
    validate_ratios(ratios)?;
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_head = (((ratios[0] + ratios[1]) * n as f64).round() as usize).clamp(n_train, n);

    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<Sample> {
        order[range].iter().map(|&i| slots[i].take().expect("each index once")).collect()
    };
    Ok(DatasetSplit {
        train: take(0..n_train),
        validation: take(n_train..n_head),
        test: take(n_head..n),
        seed,
    })
}

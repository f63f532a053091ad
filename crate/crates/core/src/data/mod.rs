//! Trajectory samples: CSV ingestion, windowing, synthetic scenes, splits
//! and the line-oriented dataset cache.
//!
//! All coordinates are road-aligned Frenet meters stored as `[x, y]` with
//! `x` lateral (increasing to the right, lane 0 leftmost) and `y`
//! longitudinal.

mod cache;
mod split;
mod synth;
mod tracks;
mod window;

pub use cache::{read_dataset, read_dataset_from, write_dataset, write_dataset_to};
pub use split::{split, validate_ratios, DatasetSplit};
pub use synth::{lane_change_progress, synth_generate, IntentionMix, ScenarioParams};
pub use tracks::{load_tracks, parse_tracks, resample, Track, TrackFormat, TrackPoint};
pub use window::make_samples;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `[lateral, longitudinal]` position in meters.
pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: duplicate row for vehicle {vehicle} at frame {frame}")]
    DuplicateRow { line: u64, vehicle: i64, frame: i64 },
    #[error("line {line}: frames of vehicle {vehicle} are not increasing ({frame} after {previous})")]
    NonMonotone {
        line: u64,
        vehicle: i64,
        frame: i64,
        previous: i64,
    },
    #[error("frame rate not declared: add a `# rate_hz=<value>` line or pass a rate")]
    MissingRate,
    #[error("frame rate conflict: file declares {declared} Hz, caller passed {given} Hz")]
    RateConflict { declared: f64, given: f64 },
    #[error("invalid rate {0} Hz")]
    InvalidRate(f64),
    #[error("invalid split ratios {0:?}: need non-negative values summing to 1 with a positive train share")]
    InvalidRatios(Vec<f64>),
    #[error("intention mix {0:?} gives zero weight to every feasible intention in lane {1}")]
    InfeasibleMix([f64; 3], usize),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("sample {index}: {message}")]
    InvalidSample { index: usize, message: String },
}

/// Macro-level maneuver of a synthetic target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intention {
    Keep,
    Left,
    Right,
}

impl Intention {
    pub const ALL: [Intention; 3] = [Intention::Keep, Intention::Left, Intention::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Lateral direction of the lane change: -1 left, +1 right, 0 keep.
    pub fn direction(self) -> f64 {
        match self {
            Intention::Keep => 0.0,
            Intention::Left => -1.0,
            Intention::Right => 1.0,
        }
    }
}

impl fmt::Display for Intention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Intention::Keep => "keep",
            Intention::Left => "left",
            Intention::Right => "right",
        })
    }
}

/// History of one surrounding vehicle, aligned with the target history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub vehicle_id: i64,
    pub history: Vec<Point>,
}

/// One prediction instance.
///
/// Field order is the serialized field order of the dataset cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub source: String,
    pub target_id: i64,
    /// Frame of the last history point (the prediction time).
    pub anchor_frame: i64,
    /// Target positions up to and including the anchor frame.
    pub history: Vec<Point>,
    pub neighbors: Vec<Neighbor>,
    /// Ground-truth target positions after the anchor frame.
    pub future: Vec<Point>,
    /// True maneuver, only known for synthetic data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intention: Option<Intention>,
}

impl Sample {
    /// Target position at the anchor frame.
    pub fn anchor(&self) -> Point {
        *self.history.last().expect("non-empty history")
    }

    /// Position of a neighbor relative to the target at the anchor frame.
    pub fn neighbor_offset(&self, neighbor: &Neighbor) -> Point {
        let a = self.anchor();
        let p = neighbor.history.last().expect("non-empty neighbor history");
        [p[0] - a[0], p[1] - a[1]]
    }

    /// Checks the length and finiteness invariants for the given window.
    pub fn check(&self, history_len: usize, horizon: usize) -> Result<(), String> {
        if self.history.len() != history_len {
            return Err(format!("history has {} points, expected {history_len}", self.history.len()));
        }
        if self.future.len() != horizon {
            return Err(format!("future has {} points, expected {horizon}", self.future.len()));
        }
        for n in &self.neighbors {
            if n.history.len() != history_len {
                return Err(format!(
                    "neighbor {} history has {} points, expected {history_len}",
                    n.vehicle_id,
                    n.history.len()
                ));
            }
        }
        let finite = |pts: &[Point]| pts.iter().all(|p| p[0].is_finite() && p[1].is_finite());
        if !finite(&self.history) || !finite(&self.future) || !self.neighbors.iter().all(|n| finite(&n.history)) {
            return Err("non-finite coordinate".into());
        }
        Ok(())
    }
}

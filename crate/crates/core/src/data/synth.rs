//! Seeded highway scenes with labeled lane-change intentions.
//!
//! Each target keeps a constant speed. Its lateral position follows a
//! half-cosine lane change of exactly one lane width that starts shortly
//! after the prediction time, so the history does not reveal the intention.
//! Speed and lane-change duration vary per sample and give the finer motion
//! level of variation inside each intention.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{DataError, Intention, Neighbor, Point, Sample};
use crate::rng::{stream_rng, Stream};

/// Relative weights of keep / left / right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentionMix {
    pub keep: f64,
    pub left: f64,
    pub right: f64,
}

impl Default for IntentionMix {
    fn default() -> Self {
        Self {
            keep: 1.0,
            left: 1.0,
            right: 1.0,
        }
    }
}

impl IntentionMix {
    fn weights(&self) -> [f64; 3] {
        [self.keep, self.left, self.right]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub mix: IntentionMix,
    /// Fixed start lane (0 = leftmost); uniform over lanes when unset.
    pub start_lane: Option<usize>,
    pub lanes: usize,
    pub lane_width: f64,
    /// Target and neighbor speed range, m/s.
    pub speed: [f64; 2],
    /// Lane-change duration range, s.
    pub change_duration: [f64; 2],
    /// Lane-change start range relative to the prediction time, s.
    pub change_start: [f64; 2],
    /// Peak amplitude of the smooth lateral noise, m.
    pub lateral_noise: f64,
    /// Peak amplitude of the smooth longitudinal noise, m.
    pub longitudinal_noise: f64,
    pub max_neighbors: usize,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            mix: IntentionMix::default(),
            start_lane: None,
            lanes: 3,
            lane_width: 3.7,
            speed: [20.0, 32.0],
            change_duration: [3.0, 6.0],
            change_start: [0.0, 1.0],
            lateral_noise: 0.1,
            longitudinal_noise: 0.2,
            max_neighbors: 4,
        }
    }
}

impl ScenarioParams {
    fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidScenario(m.to_string()));
        if self.lanes == 0 || !(self.lane_width > 0.0) {
            return bad("need at least one lane of positive width");
        }
        if let Some(l) = self.start_lane {
            if l >= self.lanes {
                return bad("start_lane outside the road");
            }
        }
        let w = self.mix.weights();
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return bad("mix weights must be finite and non-negative");
        }
        for (name, [lo, hi]) in [
            ("speed", self.speed),
            ("change_duration", self.change_duration),
            ("change_start", self.change_start),
        ] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return bad(&format!("{name} range must be ordered and finite"));
            }
        }
        if !(self.change_duration[0] > 0.0) {
            return bad("change_duration must be positive");
        }
        if !(self.lateral_noise >= 0.0) || !(self.longitudinal_noise >= 0.0) {
            return bad("noise amplitudes must be non-negative");
        }
        Ok(())
    }

    fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    fn feasible(&self, lane: usize, intention: Intention) -> bool {
        match intention {
            Intention::Keep => true,
            Intention::Left => lane > 0,
            Intention::Right => lane + 1 < self.lanes,
        }
    }
}

/// Completed fraction of a half-cosine lane change at time `t`.
///
/// 0 before `start`, 1 after `start + duration`, smooth in between.
pub fn lane_change_progress(t: f64, start: f64, duration: f64) -> f64 {
    let tau = ((t - start) / duration).clamp(0.0, 1.0);
    (1.0 - (PI * tau).cos()) / 2.0
}

/// Two low-frequency sinusoids with total amplitude at most `amplitude`.
struct SmoothNoise {
    terms: [(f64, f64, f64); 2],
}

impl SmoothNoise {
    fn draw(rng: &mut impl Rng, amplitude: f64) -> Self {
        let mut term = || {
            let a = if amplitude > 0.0 { rng.gen_range(0.0..=amplitude / 2.0) } else { 0.0 };
            let f = rng.gen_range(0.05..0.3);
            let phase = rng.gen_range(0.0..2.0 * PI);
            (a, f, phase)
        };
        Self { terms: [term(), term()] }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(a, f, p)| a * (2.0 * PI * f * t + p).sin()).sum()
    }
}

fn pick_intention(rng: &mut impl Rng, params: &ScenarioParams, lane: usize) -> Result<Intention, DataError> {
    let weights = params.mix.weights();
    let feasible_total: f64 = Intention::ALL
        .iter()
        .filter(|&&i| params.feasible(lane, i))
        .map(|i| weights[i.index()])
        .sum();
    if !(feasible_total > 0.0) {
        return Err(DataError::InfeasibleMix(weights, lane));
    }
    let total: f64 = weights.iter().sum();
    loop {
        let mut u = rng.gen_range(0.0..total);
        let mut choice = Intention::Right;
        for i in Intention::ALL {
            if u < weights[i.index()] {
                choice = i;
                break;
            }
            u -= weights[i.index()];
        }
        if params.feasible(lane, choice) && weights[choice.index()] > 0.0 {
            return Ok(choice);
        }
    }
}

/// Generates `count` labeled samples from the synthetic-stream of `seed`.
pub fn synth_generate(
    count: usize,
    seed: u64,
    params: &ScenarioParams,
    config: &TrainConfig,
) -> Result<Vec<Sample>, DataError> {
    if count == 0 {
        return Err(DataError::InvalidScenario("count must be at least 1".into()));
    }
    params.validate()?;
    let mut rng = stream_rng(seed, Stream::Synth);
    let dt = config.time_step;
    let hist = config.history_len();
    let horizon = config.horizon();
    let history_times: Vec<f64> = (0..hist).map(|i| (i as f64 - (hist - 1) as f64) * dt).collect();
    let future_times: Vec<f64> = (1..=horizon).map(|i| i as f64 * dt).collect();
    let lon_extent = config.grid.longitudinal_cells as f64 * config.grid.cell_length / 2.0;

    let mut samples = Vec::with_capacity(count);
    for index in 0..count {
        let lane = params.start_lane.unwrap_or_else(|| rng.gen_range(0..params.lanes));
        let intention = pick_intention(&mut rng, params, lane)?;
        let speed = rng.gen_range(params.speed[0]..=params.speed[1]);
        let duration = rng.gen_range(params.change_duration[0]..=params.change_duration[1]);
        let start = rng.gen_range(params.change_start[0]..=params.change_start[1]);
        let origin = rng.gen_range(0.0..200.0);
        let lat_noise = SmoothNoise::draw(&mut rng, params.lateral_noise);
        let lon_noise = SmoothNoise::draw(&mut rng, params.longitudinal_noise);
        let center = params.lane_center(lane);
        let shift = intention.direction() * params.lane_width;
        let target_at = |t: f64| -> Point {
            [
                center + shift * lane_change_progress(t, start, duration) + lat_noise.at(t),
                origin + speed * t + lon_noise.at(t),
            ]
        };

        let neighbor_count = rng.gen_range(0..=params.max_neighbors);
        let mut neighbors = Vec::with_capacity(neighbor_count);
        for j in 0..neighbor_count {
            let lo = lane.saturating_sub(1);
            let hi = (lane + 1).min(params.lanes - 1);
            let n_lane = rng.gen_range(lo..=hi);
            let n_speed = rng.gen_range(params.speed[0]..=params.speed[1]);
            let gap = rng.gen_range(-0.9 * lon_extent..0.9 * lon_extent);
            let n_noise = SmoothNoise::draw(&mut rng, params.lateral_noise);
            let n_center = params.lane_center(n_lane);
            neighbors.push(Neighbor {
                vehicle_id: 1000 + j as i64,
                history: history_times
                    .iter()
                    .map(|&t| [n_center + n_noise.at(t), origin + gap + n_speed * t])
                    .collect(),
            });
        }

        samples.push(Sample {
            source: "synth".into(),
            target_id: index as i64,
            anchor_frame: 0,
            history: history_times.iter().map(|&t| target_at(t)).collect(),
            neighbors,
            future: future_times.iter().map(|&t| target_at(t)).collect(),
            intention: Some(intention),
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_mix_from_middle_lane_is_balanced() {
        let params = ScenarioParams {
            start_lane: Some(1),
            ..ScenarioParams::default()
        };
        let samples = synth_generate(1000, 42, &params, &TrainConfig::default()).unwrap();
        for label in Intention::ALL {
            let share = samples.iter().filter(|s| s.intention == Some(label)).count() as f64 / 1000.0;
            assert!((share - 1.0 / 3.0).abs() < 0.03, "{label}: {share}");
        }
    }

    #[test]
    fn keep_samples_stay_near_lane_center() {
        let params = ScenarioParams::default();
        let samples = synth_generate(500, 3, &params, &TrainConfig::default()).unwrap();
        for s in samples.iter().filter(|s| s.intention == Some(Intention::Keep)) {
            let lane = (s.history[0][0] / params.lane_width).floor();
            let center = (lane + 0.5) * params.lane_width;
            let dev = s.future.iter().map(|p| (p[0] - center).abs()).fold(0.0, f64::max);
            assert!(dev < 0.5, "deviation {dev}");
        }
    }

    #[test]
    fn lane_changes_move_exactly_one_lane() {
        assert_eq!(lane_change_progress(-1.0, 0.5, 4.0), 0.0);
        assert_eq!(lane_change_progress(4.5, 0.5, 4.0), 1.0);
        assert!((lane_change_progress(2.5, 0.5, 4.0) - 0.5).abs() < 1e-15);
        let params = ScenarioParams {
            lateral_noise: 0.0,
            change_start: [0.0, 0.0],
            change_duration: [3.0, 4.0],
            ..ScenarioParams::default()
        };
        let samples = synth_generate(200, 9, &params, &TrainConfig::default()).unwrap();
        for s in &samples {
            let moved = s.future.last().unwrap()[0] - s.anchor()[0];
            let expected = s.intention.unwrap().direction() * params.lane_width;
            assert!((moved - expected).abs() < 1e-12, "{moved} vs {expected}");
        }
    }

    #[test]
    fn infeasible_intentions_are_never_emitted() {
        let params = ScenarioParams {
            start_lane: Some(0),
            ..ScenarioParams::default()
        };
        let samples = synth_generate(300, 1, &params, &TrainConfig::default()).unwrap();
        assert!(samples.iter().all(|s| s.intention != Some(Intention::Left)));
        let only_left = ScenarioParams {
            start_lane: Some(0),
            mix: IntentionMix {
                keep: 0.0,
                left: 1.0,
                right: 0.0,
            },
            ..ScenarioParams::default()
        };
        assert!(matches!(
            synth_generate(5, 1, &only_left, &TrainConfig::default()),
            Err(DataError::InfeasibleMix(..))
        ));
    }

    #[test]
    fn same_seed_same_samples() {
        let p = ScenarioParams::default();
        let c = TrainConfig::default();
        assert_eq!(synth_generate(50, 8, &p, &c).unwrap(), synth_generate(50, 8, &p, &c).unwrap());
        assert_ne!(synth_generate(50, 8, &p, &c).unwrap(), synth_generate(50, 9, &p, &c).unwrap());
        assert!(synth_generate(0, 8, &p, &c).is_err());
    }

    #[test]
    fn every_sample_satisfies_length_invariants() {
        let c = TrainConfig::default();
        for s in synth_generate(100, 5, &ScenarioParams::default(), &c).unwrap() {
            s.check(c.history_len(), c.horizon()).unwrap();
            for n in &s.neighbors {
                assert!(c.grid.cell_of(s.neighbor_offset(n)).is_some());
            }
        }
    }
}

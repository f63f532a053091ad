use std::collections::HashMap;

use log::debug;

use crate::config::TrainConfig;
use crate::data::{Neighbor, Sample, Track};

/// Slides a window of `history_len + horizon` frames (stride 1) over every
/// track, emitting one [`Sample`] per fully contiguous window.
///
/// Neighbors are the other vehicles present on every history frame whose
/// anchor-frame offset falls inside the pooling grid, nearest first, capped at
/// `grid.max_neighbors`. Tracks must already be resampled to the config's
/// time step.
pub fn make_samples(tracks: &[Track], config: &TrainConfig, source: &str) -> Vec<Sample> {
    let hist = config.history_len();
    let window = config.window_len();

    let mut present: HashMap<i64, Vec<usize>> = HashMap::new();
    for (ti, track) in tracks.iter().enumerate() {
        for &f in &track.frames {
            present.entry(f).or_default().push(ti);
        }
    }

    let mut samples = Vec::new();
    for (ti, target) in tracks.iter().enumerate() {
        if target.len() < window {
            continue;
        }
        for start in 0..=target.len() - window {
            let end = start + window - 1;
            if target.frames[end] - target.frames[start] != (window - 1) as i64 {
                continue;
            }
            let anchor_idx = start + hist - 1;
            let anchor_frame = target.frames[anchor_idx];
            let anchor = target.points[anchor_idx];
            let first_frame = anchor_frame - (hist as i64 - 1);

            let mut candidates: Vec<(f64, i64, Vec<[f64; 2]>)> = Vec::new();
            for &ni in present.get(&anchor_frame).map_or(&[][..], Vec::as_slice) {
                if ni == ti {
                    continue;
                }
                let other = &tracks[ni];
                let Some(a) = other.position_of(anchor_frame) else { continue };
                let Some(s) = other.position_of(first_frame) else { continue };
                if a - s != hist - 1 {
                    continue;
                }
                let p = other.points[a];
                let offset = [p[0] - anchor[0], p[1] - anchor[1]];
                if config.grid.cell_of(offset).is_none() {
                    debug!(
                        "vehicle {} outside grid of target {} at frame {anchor_frame}",
                        other.vehicle_id, target.vehicle_id
                    );
                    continue;
                }
                let dist = offset[0].hypot(offset[1]);
                candidates.push((dist, other.vehicle_id, other.points[s..=a].to_vec()));
            }
            candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            candidates.truncate(config.grid.max_neighbors);

            samples.push(Sample {
                source: source.to_string(),
                target_id: target.vehicle_id,
                anchor_frame,
                history: target.points[start..=anchor_idx].to_vec(),
                neighbors: candidates
                    .into_iter()
                    .map(|(_, vehicle_id, history)| Neighbor { vehicle_id, history })
                    .collect(),
                future: target.points[anchor_idx + 1..=end].to_vec(),
                intention: None,
            });
        }
    }
    samples
}

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::eval::{admissible, horizon_steps, EvalCase, EvalError, HorizonMetrics};
use crate::training::arbitrate;

/// Fixed-width table with one row per `(name, metrics)` and one column per
/// horizon second.
pub fn format_table(title: &str, rows: &[(String, &HorizonMetrics)]) -> String {
    let seconds: Vec<u32> = rows
        .iter()
        .flat_map(|(_, m)| m.per_second.keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(title.len());
    let mut out = String::new();
    let _ = write!(out, "{title:<width$}");
    for s in &seconds {
        let _ = write!(out, " {:>8}", format!("{s}s"));
    }
    out.push('\n');
    for (name, metrics) in rows {
        let _ = write!(out, "{name:<width$}");
        for s in &seconds {
            match metrics.at(*s) {
                Some(v) => {
                    let _ = write!(out, " {v:>8.4}");
                }
                None => {
                    let _ = write!(out, " {:>8}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Per-sample errors for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Arbitrated winner `[m, n]`.
    pub winner: [usize; 2],
    pub most_probable: usize,
    pub probabilities: Vec<f64>,
    /// Error of the most probable candidate at each horizon second.
    pub error: Vec<f64>,
    /// Lowest error over admissible candidates at each horizon second.
    pub min_error: Vec<f64>,
}

pub fn sample_records(cases: &[EvalCase], threshold: f64) -> Result<Vec<SampleRecord>, EvalError> {
    cases
        .iter()
        .map(|c| {
            let p = &c.prediction;
            let winner = arbitrate(p, &c.ground_truth)?;
            let best = p.most_probable();
            let cands = admissible(p, threshold);
            let dist = |i: usize, step: usize| {
                let (a, b) = (p.trajectories[i][step], c.ground_truth[step]);
                (a[0] - b[0]).hypot(a[1] - b[1])
            };
            let steps = horizon_steps(p.horizon, p.time_step);
            Ok(SampleRecord {
                id: c.id.clone(),
                label: c.label.map(|l| l.to_string()),
                winner: [winner.intention, winner.motion],
                most_probable: best,
                probabilities: p.probabilities.clone(),
                error: steps.iter().map(|&(_, s)| dist(best, s)).collect(),
                min_error: steps
                    .iter()
                    .map(|&(_, s)| cands.iter().map(|&i| dist(i, s)).fold(f64::INFINITY, f64::min))
                    .collect(),
            })
        })
        .collect()
}

use std::cmp::Ordering;

use log::debug;

use crate::autodiff::{Tensor, Var};
use crate::config::GridSpec;
use crate::data::Point;
use crate::model::ModelError;
use crate::scalar::Scalar;

/// Target encoding plus a fixed-length summary of its neighbors.
#[derive(Clone, Copy, Debug)]
pub struct InteractionContext<'t, T> {
    /// `1 x encoder_hidden`.
    pub target_encoding: Var<'t, T>,
    /// `1 x social_size`.
    pub social_encoding: Var<'t, T>,
    /// Cell-wise mean neighbor encodings (`cells x encoder_hidden`) before
    /// the dense projection; `None` when nothing was pooled.
    pub grid: Option<Var<'t, T>>,
    /// `[target_encoding, social_encoding]`.
    pub combined: Var<'t, T>,
}

fn lexicographic<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Summarizes neighbor encodings on the occupancy grid.
///
/// `pool_weight` is the `(cells * encoder_hidden) x social_size` projection;
/// `None` selects the "none" pooling, whose social encoding is always zero.
/// Neighbors outside the grid are skipped. Neighbors are placed in a
/// canonical order before the cell means are taken, so the result does not
/// depend on the order of `neighbors`.
pub fn pool_interactions<'t, T: Scalar>(
    pool_weight: Option<Var<'t, T>>,
    grid: &GridSpec,
    social_size: usize,
    target_encoding: Var<'t, T>,
    neighbors: &[(Point, Var<'t, T>)],
) -> Result<InteractionContext<'t, T>, ModelError> {
    let tape = target_encoding.tape();
    let zeros = || tape.constant(Tensor::zeros(&[1, social_size]));
    let mut grid_var = None;
    let social_encoding = match pool_weight {
        None => zeros(),
        Some(weight) => {
            let mut placed: Vec<(usize, Vec<T>, Var<'t, T>)> = Vec::new();
            for &(offset, enc) in neighbors {
                match grid.cell_of(offset) {
                    Some(cell) => placed.push((cell, enc.with_value(|v| v.data().to_vec()), enc)),
                    None => debug!("neighbor at offset {offset:?} outside the pooling grid"),
                }
            }
            if placed.is_empty() {
                zeros()
            } else {
                placed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| lexicographic(&a.1, &b.1)));
                let cells = grid.cells();
                let mut counts = vec![0usize; cells];
                for p in &placed {
                    counts[p.0] += 1;
                }
                let mut assign = Tensor::zeros(&[cells, placed.len()]);
                for (j, p) in placed.iter().enumerate() {
                    assign.data_mut()[p.0 * placed.len() + j] = T::one() / T::of(counts[p.0] as f64);
                }
                let encodings: Vec<Var<'t, T>> = placed.iter().map(|p| p.2).collect();
                let stacked = tape.concat(&encodings, 0)?;
                let hidden = stacked.shape()[1];
                let cell_means = tape.constant(assign).matmul(stacked)?;
                grid_var = Some(cell_means);
                cell_means.reshape(&[1, cells * hidden])?.matmul(weight)?.tanh()
            }
        }
    };
    let combined = tape.concat(&[target_encoding, social_encoding], 1)?;
    Ok(InteractionContext {
        target_encoding,
        social_encoding,
        grid: grid_var,
        combined,
    })
}

//! LSTM encoder-decoder emitting all `M x N` candidate trajectories and
//! their joint probabilities in one forward pass.
//!
//! The target and its neighbors share one encoder. Neighbor encodings are
//! summarized by [`pool_interactions`]. The decoder runs once over all modes
//! batched as rows; each row's input is the interaction context followed by
//! one-hot intention and motion vectors, repeated at every step.

mod checkpoint;
mod lstm;
mod pool;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use lstm::{encode_history, BoundLstm, LstmCell, LstmState};
pub use pool::{pool_interactions, InteractionContext};

use std::cell::Cell;
use std::path::PathBuf;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::config::{ConfigError, PoolingMode, TrainConfig};
use crate::data::Sample;
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot encode an empty track")]
    EmptyTrack,
    #[error("invalid sample: {0}")]
    Sample(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("expected {expected} parameters, got {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Affine map `x W + b` with `b` a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// All trainable tensors plus the config that fixes their shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: TrainConfig,
    pub encoder: LstmCell<T>,
    /// Grid-pool projection; absent with pooling "none".
    pub pool: Option<Tensor<T>>,
    pub decoder: LstmCell<T>,
    pub trajectory_head: Affine<T>,
    pub probability_head: Affine<T>,
}

/// Parameter names and shapes in checkpoint order.
pub fn param_layout(config: &TrainConfig) -> Vec<(String, Vec<usize>)> {
    let d = &config.model;
    let (e, h, s) = (d.encoder_hidden, d.decoder_hidden, d.social_size);
    let (m, n) = (config.intention_modes, config.motion_modes);
    let mut layout = vec![
        ("encoder.w_ih", vec![2, 4 * e]),
        ("encoder.w_hh", vec![e, 4 * e]),
        ("encoder.bias", vec![1, 4 * e]),
    ];
    if config.pooling == PoolingMode::GridPool {
        layout.push(("pool.weight", vec![config.grid.cells() * e, s]));
    }
    layout.extend([
        ("decoder.w_ih", vec![e + s + m + n, 4 * h]),
        ("decoder.w_hh", vec![h, 4 * h]),
        ("decoder.bias", vec![1, 4 * h]),
        ("trajectory_head.weight", vec![h, 2]),
        ("trajectory_head.bias", vec![1, 2]),
        ("probability_head.weight", vec![e + s, m * n]),
        ("probability_head.bias", vec![1, m * n]),
    ]);
    layout.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn check_dims(config: &TrainConfig) -> Result<(), ModelError> {
    let d = &config.model;
    if d.encoder_hidden == 0 || d.decoder_hidden == 0 || d.social_size == 0 {
        return Err(ConfigError::Invalid("layer sizes must be positive".into()).into());
    }
    if config.intention_modes == 0 || config.motion_modes == 0 {
        return Err(ConfigError::Invalid("M and N must be at least 1".into()).into());
    }
    Ok(())
}

impl<T: Scalar> ModelParams<T> {
    /// Uniform `+-1/sqrt(fan_in)` weights, zero biases, forget-gate bias 1.
    /// Draws come from the init stream of `config.seed`.
    pub fn init(config: &TrainConfig) -> Result<Self, ModelError> {
        check_dims(config)?;
        let mut rng = stream_rng(config.seed, Stream::Init);
        let tensors = param_layout(config)
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with("bias") {
                    let mut b = Tensor::zeros(&shape);
                    if name.starts_with("encoder") || name.starts_with("decoder") {
                        let h = shape[1] / 4;
                        b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = T::one());
                    }
                    b
                } else {
                    let bound = 1.0 / (shape[0] as f64).sqrt();
                    let data = (0..shape.iter().product::<usize>())
                        .map(|_| T::of(rng.gen_range(-bound..=bound)))
                        .collect();
                    Tensor::new(shape, data).expect("layout shapes are positive")
                }
            })
            .collect();
        Self::from_tensors(config.clone(), tensors)
    }

    /// Assembles parameters from tensors in [`param_layout`] order.
    pub fn from_tensors(config: TrainConfig, tensors: Vec<Tensor<T>>) -> Result<Self, ModelError> {
        check_dims(&config)?;
        let layout = param_layout(&config);
        if layout.len() != tensors.len() {
            return Err(ModelError::ParamCount {
                expected: layout.len(),
                found: tensors.len(),
            });
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Shape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        let encoder = LstmCell {
            w_ih: next(),
            w_hh: next(),
            bias: next(),
        };
        let pool = (config.pooling == PoolingMode::GridPool).then(&mut next);
        let decoder = LstmCell {
            w_ih: next(),
            w_hh: next(),
            bias: next(),
        };
        let trajectory_head = Affine {
            weight: next(),
            bias: next(),
        };
        let probability_head = Affine {
            weight: next(),
            bias: next(),
        };
        Ok(Self {
            config,
            encoder,
            pool,
            decoder,
            trajectory_head,
            probability_head,
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.encoder.w_ih, &self.encoder.w_hh, &self.encoder.bias];
        v.extend(self.pool.as_ref());
        v.extend([
            &self.decoder.w_ih,
            &self.decoder.w_hh,
            &self.decoder.bias,
            &self.trajectory_head.weight,
            &self.trajectory_head.bias,
            &self.probability_head.weight,
            &self.probability_head.bias,
        ]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.encoder.w_ih, &mut self.encoder.w_hh, &mut self.encoder.bias];
        v.extend(self.pool.as_mut());
        v.extend([
            &mut self.decoder.w_ih,
            &mut self.decoder.w_hh,
            &mut self.decoder.bias,
            &mut self.trajectory_head.weight,
            &mut self.trajectory_head.bias,
            &mut self.probability_head.weight,
            &mut self.probability_head.bias,
        ]);
        v
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        param_layout(&self.config).into_iter().map(|(n, _)| n).zip(self.tensors()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Records every tensor on `tape`, as trainable leaves or constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundParams<'t, T> {
        let vars: Vec<Var<'t, T>> = self
            .tensors()
            .into_iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        BoundParams::from_vars(&self.config, &vars).expect("own tensors match own layout")
    }

    /// Runs the model on one sample without recording gradients.
    pub fn predict(&self, sample: &Sample) -> Result<PredictionSet<T>, ModelError> {
        let tape = Tape::new();
        let forward = self.bind(&tape, false).forward(sample)?;
        Ok(forward.prediction_set())
    }
}

/// Parameters recorded on a tape, in [`param_layout`] order.
#[derive(Clone, Debug)]
pub struct BoundParams<'t, T> {
    pub config: TrainConfig,
    pub encoder: BoundLstm<'t, T>,
    pub pool: Option<Var<'t, T>>,
    pub decoder: BoundLstm<'t, T>,
    pub trajectory_weight: Var<'t, T>,
    pub trajectory_bias: Var<'t, T>,
    pub probability_weight: Var<'t, T>,
    pub probability_bias: Var<'t, T>,
    vars: Vec<Var<'t, T>>,
}

/// Output of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward<'t, T> {
    /// Absolute positions, `MN x 2H`; row `m N + n`, columns `x1 y1 x2 y2 ...`.
    pub positions: Var<'t, T>,
    /// `1 x MN`.
    pub logits: Var<'t, T>,
    pub log_probs: Var<'t, T>,
    pub context: InteractionContext<'t, T>,
    pub intention_modes: usize,
    pub motion_modes: usize,
    pub horizon: usize,
    pub time_step: f64,
}

thread_local! {
    static DECODE_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`BoundParams::decode_all_modes`] calls on this thread.
pub fn decode_invocations() -> u64 {
    DECODE_CALLS.with(Cell::get)
}

fn to_point<T: Scalar>(p: [f64; 2]) -> [T; 2] {
    [T::of(p[0]), T::of(p[1])]
}

impl<'t, T: Scalar> BoundParams<'t, T> {
    pub fn from_vars(config: &TrainConfig, vars: &[Var<'t, T>]) -> Result<Self, ModelError> {
        let layout = param_layout(config);
        if layout.len() != vars.len() {
            return Err(ModelError::ParamCount {
                expected: layout.len(),
                found: vars.len(),
            });
        }
        for ((name, shape), v) in layout.iter().zip(vars) {
            let found = v.shape();
            if &found != shape {
                return Err(ModelError::Shape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found,
                });
            }
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("count checked");
        let encoder = BoundLstm {
            w_ih: next(),
            w_hh: next(),
            bias: next(),
        };
        let pool = (config.pooling == PoolingMode::GridPool).then(&mut next);
        let decoder = BoundLstm {
            w_ih: next(),
            w_hh: next(),
            bias: next(),
        };
        Ok(Self {
            config: config.clone(),
            encoder,
            pool,
            decoder,
            trajectory_weight: next(),
            trajectory_bias: next(),
            probability_weight: next(),
            probability_bias: next(),
            vars: vars.to_vec(),
        })
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    fn tape(&self) -> &'t Tape<T> {
        self.encoder.w_ih.tape()
    }

    /// Encodes the target and its neighbors and pools them into a context.
    pub fn context(&self, sample: &Sample) -> Result<InteractionContext<'t, T>, ModelError> {
        if sample.history.is_empty() {
            return Err(ModelError::EmptyTrack);
        }
        let steps = sample.history.len();
        if let Some(n) = sample.neighbors.iter().find(|n| n.history.len() != steps) {
            return Err(ModelError::Sample(format!(
                "neighbor {} history has {} points, target has {steps}",
                n.vehicle_id,
                n.history.len()
            )));
        }
        let anchor = sample.anchor();
        let scale = self.config.model.input_scale;
        let mut tracks = vec![&sample.history];
        let mut offsets = Vec::new();
        if self.pool.is_some() {
            for n in &sample.neighbors {
                tracks.push(&n.history);
                offsets.push(sample.neighbor_offset(n));
            }
        }
        let inputs: Vec<Var<'t, T>> = (0..steps)
            .map(|t| {
                let data = tracks
                    .iter()
                    .flat_map(|tr| [T::of((tr[t][0] - anchor[0]) * scale), T::of((tr[t][1] - anchor[1]) * scale)])
                    .collect();
                self.tape().constant(Tensor::new(vec![tracks.len(), 2], data).expect("two columns per track"))
            })
            .collect();
        let encoded = self.encoder.run(&inputs)?;
        let target = encoded.slice(0, 0, 1)?;
        let neighbors = offsets
            .iter()
            .enumerate()
            .map(|(j, &off)| Ok((off, encoded.slice(0, j + 1, j + 2)?)))
            .collect::<Result<Vec<_>, AutodiffError>>()?;
        pool_interactions(self.pool, &self.config.grid, self.config.model.social_size, target, &neighbors)
    }

    /// Decodes every `(m, n)` mode from `context` in one batched pass.
    ///
    /// `anchor` is the last observed position and `velocity` the last
    /// observed per-step displacement (used only with the velocity prior).
    pub fn decode_all_modes(
        &self,
        context: &InteractionContext<'t, T>,
        anchor: [T; 2],
        velocity: [T; 2],
    ) -> Result<Forward<'t, T>, ModelError> {
        DECODE_CALLS.with(|c| c.set(c.get() + 1));
        let tape = self.tape();
        let (m, n) = (self.config.intention_modes, self.config.motion_modes);
        let mn = m * n;
        let horizon = self.config.horizon();

        let mut onehots = Tensor::zeros(&[mn, m + n]);
        for r in 0..mn {
            onehots.data_mut()[r * (m + n) + r / n] = T::one();
            onehots.data_mut()[r * (m + n) + m + r % n] = T::one();
        }
        let x = tape.concat(&[context.combined.tile_rows(mn)?, tape.constant(onehots)], 1)?;
        let input_gates = self.decoder.input_gates(x)?;
        let out_bias = self.trajectory_bias.tile_rows(mn)?;
        let output_scale = T::of(self.config.model.output_scale);
        let prior = self.config.model.velocity_prior.then(|| {
            tape.constant(Tensor::new(vec![mn, 2], [velocity[0], velocity[1]].repeat(mn)).expect("mn rows"))
        });

        let mut position = tape.constant(Tensor::new(vec![mn, 2], [anchor[0], anchor[1]].repeat(mn)).expect("mn rows"));
        let mut state = None;
        let mut steps = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let (h, c) = self.decoder.step(input_gates, state)?;
            state = Some((h, c));
            let mut displacement = h.matmul(self.trajectory_weight)?.add(out_bias)?.scale(output_scale);
            if let Some(v) = prior {
                displacement = displacement.add(v)?;
            }
            position = position.add(displacement)?;
            steps.push(position);
        }
        let positions = tape.concat(&steps, 1)?;
        let logits = context.combined.matmul(self.probability_weight)?.add(self.probability_bias)?;
        Ok(Forward {
            positions,
            logits,
            log_probs: logits.log_softmax(),
            context: *context,
            intention_modes: m,
            motion_modes: n,
            horizon,
            time_step: self.config.time_step,
        })
    }

    /// Full forward pass for one sample.
    pub fn forward(&self, sample: &Sample) -> Result<Forward<'t, T>, ModelError> {
        let context = self.context(sample)?;
        let h = &sample.history;
        let anchor = sample.anchor();
        let velocity = if h.len() >= 2 {
            let prev = h[h.len() - 2];
            [anchor[0] - prev[0], anchor[1] - prev[1]]
        } else {
            [0.0, 0.0]
        };
        self.decode_all_modes(&context, to_point(anchor), to_point(velocity))
    }
}

impl<T: Scalar> Forward<'_, T> {
    pub fn prediction_set(&self) -> PredictionSet<T> {
        let h = self.horizon;
        let trajectories = self.positions.with_value(|p| {
            p.data()
                .chunks(2 * h)
                .map(|row| row.chunks(2).map(|c| [c[0], c[1]]).collect())
                .collect()
        });
        let probabilities = self.logits.with_value(|l| softmax(l.data()));
        PredictionSet {
            intention_modes: self.intention_modes,
            motion_modes: self.motion_modes,
            horizon: h,
            time_step: self.time_step,
            trajectories,
            probabilities,
        }
    }
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// All `M x N` candidate trajectories of one sample with their probabilities.
///
/// Candidate `(m, n)` is stored at index `m * N + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet<T> {
    pub intention_modes: usize,
    pub motion_modes: usize,
    pub horizon: usize,
    pub time_step: f64,
    pub trajectories: Vec<Vec<[T; 2]>>,
    pub probabilities: Vec<T>,
}

impl<T: Scalar> PredictionSet<T> {
    pub fn candidates(&self) -> usize {
        self.intention_modes * self.motion_modes
    }

    pub fn index(&self, m: usize, n: usize) -> usize {
        m * self.motion_modes + n
    }

    pub fn trajectory(&self, m: usize, n: usize) -> &[[T; 2]] {
        &self.trajectories[self.index(m, n)]
    }

    pub fn probability(&self, m: usize, n: usize) -> T {
        self.probabilities[self.index(m, n)]
    }

    /// Index of the most probable candidate, lowest index on ties.
    pub fn most_probable(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    /// Checks shapes, finiteness and normalization (within `tolerance`).
    pub fn validate(&self, tolerance: f64) -> Result<(), String> {
        let count = self.candidates();
        if count == 0 || self.trajectories.len() != count || self.probabilities.len() != count {
            return Err(format!(
                "expected {count} candidates, got {} trajectories and {} probabilities",
                self.trajectories.len(),
                self.probabilities.len()
            ));
        }
        if let Some(t) = self.trajectories.iter().find(|t| t.len() != self.horizon) {
            return Err(format!("trajectory of {} points, horizon is {}", t.len(), self.horizon));
        }
        if !self.trajectories.iter().flatten().flatten().all(|v| v.is_finite()) {
            return Err("non-finite trajectory coordinate".into());
        }
        if !self.probabilities.iter().all(|&p| p > T::zero() && p <= T::one()) {
            return Err("probability outside (0, 1]".into());
        }
        let sum: T = self.probabilities.iter().copied().sum();
        if (sum.as_f64() - 1.0).abs() > tolerance {
            return Err(format!("probabilities sum to {sum}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::config::GridSpec;
use crate::data::{synth_generate, Neighbor, ScenarioParams};

fn small_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.model.encoder_hidden = 6;
    c.model.decoder_hidden = 8;
    c.model.social_size = 4;
    c
}

fn sample(config: &TrainConfig, seed: u64) -> Sample {
    let params = ScenarioParams {
        max_neighbors: 4,
        ..ScenarioParams::default()
    };
    synth_generate(1, seed, &params, config).unwrap().remove(0)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let data = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Textbook LSTM recurrence over plain vectors, gate order i, f, g, o.
fn oracle_lstm(cell: &LstmCell<f64>, track: &[[f64; 2]]) -> Vec<f64> {
    let h_size = cell.hidden_size();
    let (mut h, mut c) = (vec![0.0; h_size], vec![0.0; h_size]);
    for x in track {
        let mut z = vec![0.0; 4 * h_size];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut acc = cell.bias.at(0, j);
            for (k, xk) in x.iter().enumerate() {
                acc += xk * cell.w_ih.at(k, j);
            }
            for (k, hk) in h.iter().enumerate() {
                acc += hk * cell.w_hh.at(k, j);
            }
            *zj = acc;
        }
        for j in 0..h_size {
            let i = sig(z[j]);
            let f = sig(z[h_size + j]);
            let g = z[2 * h_size + j].tanh();
            let o = sig(z[3 * h_size + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
    }
    h
}

fn random_cell(rng: &mut ChaCha8Rng, hidden: usize) -> LstmCell<f64> {
    LstmCell {
        w_ih: random_tensor(rng, &[2, 4 * hidden], 0.8),
        w_hh: random_tensor(rng, &[hidden, 4 * hidden], 0.8),
        bias: random_tensor(rng, &[1, 4 * hidden], 0.8),
    }
}

fn bind_cell<'t>(tape: &'t Tape<f64>, cell: &LstmCell<f64>) -> BoundLstm<'t, f64> {
    BoundLstm {
        w_ih: tape.constant(cell.w_ih.clone()),
        w_hh: tape.constant(cell.w_hh.clone()),
        bias: tape.constant(cell.bias.clone()),
    }
}

#[test]
fn zero_weights_give_zero_hidden_state() {
    let cell = LstmCell {
        w_ih: Tensor::zeros(&[2, 20]),
        w_hh: Tensor::zeros(&[5, 20]),
        bias: Tensor::zeros(&[1, 20]),
    };
    let tape = Tape::new();
    let track: Vec<[f64; 2]> = (0..16).map(|i| [i as f64 * 0.3, -2.0 * i as f64]).collect();
    let h = encode_history(&bind_cell(&tape, &cell), &track).unwrap().value();
    assert!(h.data().iter().all(|&v| v == 0.0));
}

#[test]
fn empty_track_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cell = random_cell(&mut rng, 3);
    let tape = Tape::new();
    assert!(matches!(encode_history(&bind_cell(&tape, &cell), &[]), Err(ModelError::EmptyTrack)));
}

#[test]
fn single_point_track_is_one_step_from_zero_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cell = random_cell(&mut rng, 4);
    let tape = Tape::new();
    let bound = bind_cell(&tape, &cell);
    let h = encode_history(&bound, &[[0.4, -1.3]]).unwrap().value();
    let x = tape.constant(Tensor::row(vec![0.4, -1.3]));
    let zero = tape.constant(Tensor::zeros(&[1, 4]));
    let (h_step, _) = bound.step(bound.input_gates(x).unwrap(), Some((zero, zero))).unwrap();
    assert_eq!(h, h_step.value());
}

#[test]
fn encoder_matches_reference_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let cell = random_cell(&mut rng, 7);
        let track: Vec<[f64; 2]> = (0..16).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let tape = Tape::new();
        let h = encode_history(&bind_cell(&tape, &cell), &track).unwrap().value();
        for (a, b) in h.data().iter().zip(oracle_lstm(&cell, &track)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

fn encoding<'t>(tape: &'t Tape<f64>, values: Vec<f64>) -> Var<'t, f64> {
    tape.constant(Tensor::row(values))
}

#[test]
fn pooling_without_neighbors_is_zero() {
    let tape = Tape::new();
    let grid = GridSpec::default();
    let weight = tape.constant(Tensor::filled(&[grid.cells() * 2, 3], 0.7));
    let target = encoding(&tape, vec![0.1, 0.2]);
    let ctx = pool_interactions(Some(weight), &grid, 3, target, &[]).unwrap();
    assert_eq!(ctx.social_encoding.value().data(), &[0.0; 3]);
    assert_eq!(ctx.combined.value().data(), &[0.1, 0.2, 0.0, 0.0, 0.0]);
    let far = [([0.0, 500.0], encoding(&tape, vec![1.0, 1.0]))];
    let ctx = pool_interactions(Some(weight), &grid, 3, target, &far).unwrap();
    assert_eq!(ctx.social_encoding.value().data(), &[0.0; 3]);
}

#[test]
fn pooling_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = GridSpec::default();
    let w = random_tensor(&mut rng, &[grid.cells() * 3, 4], 0.5);
    let encs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    // Two neighbors share a cell, so the cell mean depends on summation order.
    let offsets = [[0.1, 3.0], [0.2, 3.5], [-3.7, -10.0], [3.9, 20.0], [1.0, -1.0]];
    let run = |order: &[usize]| {
        let tape = Tape::new();
        let neighbors: Vec<_> = order.iter().map(|&i| (offsets[i], encoding(&tape, encs[i].clone()))).collect();
        let target = encoding(&tape, vec![0.5, -0.5, 0.25]);
        let weight = tape.constant(w.clone());
        let ctx = pool_interactions(Some(weight), &grid, 4, target, &neighbors).unwrap();
        ctx.combined.value()
    };
    let reference = run(&[0, 1, 2, 3, 4]);
    for order in [[4, 3, 2, 1, 0], [1, 0, 3, 2, 4], [2, 4, 1, 3, 0]] {
        assert_eq!(run(&order), reference);
    }
}

#[test]
fn single_neighbor_fills_only_its_cell() {
    let tape = Tape::new();
    let grid = GridSpec::default();
    let offset = [3.0, -9.0];
    let k = grid.cell_of(offset).unwrap();
    // Lateral cell 2 (right lane), longitudinal cell floor((-9 + 29.718) / 4.572) = 4.
    assert_eq!(k, 2 * 13 + 4);
    let weight = tape.constant(Tensor::filled(&[grid.cells() * 2, 3], 0.1));
    let target = encoding(&tape, vec![0.0, 0.0]);
    let ctx = pool_interactions(Some(weight), &grid, 3, target, &[(offset, encoding(&tape, vec![0.3, -0.8]))]).unwrap();
    let cells = ctx.grid.unwrap().value();
    assert_eq!(cells.shape(), &[grid.cells(), 2]);
    for row in 0..grid.cells() {
        let expected = if row == k { [0.3, -0.8] } else { [0.0, 0.0] };
        assert_eq!([cells.at(row, 0), cells.at(row, 1)], expected, "cell {row}");
    }
    let projected = (0.1f64 * 0.3 + 0.1 * -0.8).tanh();
    assert!(ctx.social_encoding.value().data().iter().all(|&v| (v - projected).abs() < 1e-15));
}

#[test]
fn default_modes_give_six_trajectories() {
    let config = small_config();
    let params = ModelParams::<f64>::init(&config).unwrap();
    let set = params.predict(&sample(&config, 1)).unwrap();
    assert_eq!(set.trajectories.len(), 6);
    assert!(set.trajectories.iter().all(|t| t.len() == 25));
    assert_eq!((set.intention_modes, set.motion_modes), (3, 2));
    set.validate(1e-9).unwrap();
}

#[test]
fn single_mode_has_probability_one() {
    let mut config = small_config();
    config.intention_modes = 1;
    config.motion_modes = 1;
    let params = ModelParams::<f64>::init(&config).unwrap();
    let set = params.predict(&sample(&config, 2)).unwrap();
    assert_eq!(set.probabilities, vec![1.0]);
}

#[test]
fn modes_differ_only_through_their_one_hot_inputs() {
    let config = small_config();
    let params = ModelParams::<f64>::init(&config).unwrap();
    let s = sample(&config, 3);
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let ctx = bound.context(&s).unwrap();
    let fwd = bound.decode_all_modes(&ctx, [0.0, 0.0], [0.0, 0.0]).unwrap();
    let set = fwd.prediction_set();
    // Decoder input rows for (0, 0) and (2, 1) differ in the intention and
    // motion one-hot blocks only.
    let rows = |m: usize, n: usize| {
        let mut r = ctx.combined.value().into_data();
        r.extend((0..3).map(|i| if i == m { 1.0 } else { 0.0 }));
        r.extend((0..2).map(|i| if i == n { 1.0 } else { 0.0 }));
        r
    };
    let (a, b) = (rows(0, 0), rows(2, 1));
    assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), 4);
    assert_ne!(set.trajectory(0, 0), set.trajectory(2, 1));
}

#[test]
fn one_decode_call_per_sample() {
    let config = small_config();
    let params = ModelParams::<f64>::init(&config).unwrap();
    let samples: Vec<Sample> = (0..4).map(|i| sample(&config, 10 + i)).collect();
    let before = decode_invocations();
    for s in &samples {
        params.predict(s).unwrap();
    }
    assert_eq!(decode_invocations() - before, 4);
}

#[test]
fn pooling_none_ignores_neighbors() {
    let mut config = small_config();
    config.pooling = PoolingMode::None;
    let params = ModelParams::<f64>::init(&config).unwrap();
    let mut s = sample(&config, 5);
    let base = params.predict(&s).unwrap();
    s.neighbors.push(Neighbor {
        vehicle_id: 77,
        history: s.history.iter().map(|p| [p[0] + 3.7, p[1] + 8.0]).collect(),
    });
    assert_eq!(params.predict(&s).unwrap(), base);
    s.neighbors.clear();
    assert_eq!(params.predict(&s).unwrap(), base);
}

#[test]
fn grid_pool_uses_neighbors() {
    let config = small_config();
    let params = ModelParams::<f64>::init(&config).unwrap();
    let mut s = sample(&config, 6);
    s.neighbors.clear();
    let alone = params.predict(&s).unwrap();
    s.neighbors.push(Neighbor {
        vehicle_id: 77,
        history: s.history.iter().map(|p| [p[0] + 3.7, p[1] + 8.0]).collect(),
    });
    assert_ne!(params.predict(&s).unwrap(), alone);
}

#[test]
fn mismatched_neighbor_history_is_rejected() {
    let config = small_config();
    let params = ModelParams::<f64>::init(&config).unwrap();
    let mut s = sample(&config, 7);
    s.neighbors.push(Neighbor {
        vehicle_id: 9,
        history: vec![[0.0, 0.0]],
    });
    assert!(matches!(params.predict(&s), Err(ModelError::Sample(_))));
}

#[test]
fn init_follows_fan_in_bounds_and_seed() {
    let config = small_config();
    let a = ModelParams::<f64>::init(&config).unwrap();
    assert_eq!(a, ModelParams::<f64>::init(&config).unwrap());
    let mut other = config.clone();
    other.seed += 1;
    assert_ne!(a, ModelParams::<f64>::init(&other).unwrap());
    for (name, t) in a.named_tensors() {
        if name.ends_with("bias") {
            continue;
        }
        let bound = 1.0 / (t.rows() as f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound), "{name}");
    }
    let e = config.model.encoder_hidden;
    let bias = a.encoder.bias.data();
    assert!(bias[..e].iter().all(|&v| v == 0.0));
    assert!(bias[e..2 * e].iter().all(|&v| v == 1.0));
    assert!(bias[2 * e..].iter().all(|&v| v == 0.0));
    assert!(a.trajectory_head.bias.data().iter().all(|&v| v == 0.0));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let config = small_config();
    let params = ModelParams::<f64>::init(&config).unwrap();
    let bytes = write_checkpoint(&params);
    assert!(bytes.starts_with(b"DSMCL1"));
    let back: ModelParams<f64> = read_checkpoint(&bytes).unwrap();
    assert_eq!(back, params);
    assert_eq!(write_checkpoint(&back), bytes);
}

#[test]
fn checkpoint_rejects_bad_input() {
    let config = small_config();
    let params = ModelParams::<f64>::init(&config).unwrap();
    let bytes = write_checkpoint(&params);
    assert!(matches!(read_checkpoint::<f64>(&bytes[..bytes.len() - 1]), Err(ModelError::Checkpoint(_))));
    assert!(matches!(read_checkpoint::<f64>(b"NOTDSM"), Err(ModelError::Checkpoint(_))));
    // Reassemble with a config whose M disagrees with the stored shapes.
    let mut wrong = config.clone();
    wrong.intention_modes = 2;
    let tensors: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
    assert!(matches!(ModelParams::from_tensors(wrong, tensors), Err(ModelError::Shape { .. })));
}

#[test]
fn f32_model_runs() {
    let config = small_config();
    let params = ModelParams::<f32>::init(&config).unwrap();
    let set = params.predict(&sample(&config, 8)).unwrap();
    set.validate(1e-5).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn shapes_and_normalization_hold(m in 1usize..5, n in 1usize..4, future in 1usize..8, seed in 0u64..1000) {
        let mut config = small_config();
        config.intention_modes = m;
        config.motion_modes = n;
        config.future_seconds = future as f64 * config.time_step;
        config.seed = seed;
        let params = ModelParams::<f64>::init(&config).unwrap();
        let set = params.predict(&sample(&config, seed)).unwrap();
        prop_assert_eq!(set.trajectories.len(), m * n);
        prop_assert!(set.trajectories.iter().all(|t| t.len() == future));
        prop_assert!(set.validate(1e-9).is_ok());
    }
}

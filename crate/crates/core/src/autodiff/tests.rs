use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.gen_range(-scale..scale)).collect::<Vec<_>>())
}

#[test]
fn sigmoid_of_zero_is_half() {
    let tape = Tape::new();
    let y = tape.scalar(0.0).sigmoid();
    assert_eq!(y.item(), Some(0.5));
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    for c in [-1e6, -3.5, 0.0, 42.0, 1e6] {
        let tape = Tape::new();
        let y = tape.constant(t(&[1, 3], &[c, c, c])).softmax().value();
        for &p in y.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}

#[test]
fn concat_last_axis_adds_widths() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[1, 4]));
    let b = tape.constant(Tensor::zeros(&[1, 6]));
    assert_eq!(tape.concat(&[a, b], 1).unwrap().shape(), vec![1, 10]);
}

#[test]
fn shape_mismatch_names_primitive_and_shapes() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    let err = a.add(b).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::ShapeMismatch {
            op: "add",
            left: vec![2, 3],
            right: vec![3, 2]
        }
    );
    assert!(err.to_string().contains("add"));
    assert!(a.matmul(a).is_err());
}

#[test]
fn scalar_broadcast_is_the_only_broadcast() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let s = tape.scalar(10.0);
    assert_eq!(a.add(s).unwrap().value().data(), &[11.0, 12.0, 13.0, 14.0]);
    let row = tape.constant(t(&[1, 2], &[1.0, 1.0]));
    assert!(a.add(row).is_err());
}

#[test]
fn log_of_non_positive_is_domain_error() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2], &[1.0, 0.0]));
    assert!(matches!(x.ln(), Err(AutodiffError::Domain { op: "ln", .. })));
    let x = tape.constant(t(&[1], &[-2.0]));
    assert!(x.ln().is_err());
}

#[test]
fn square_gradient_is_two_x() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = x.mul(x).unwrap();
    let g = y.backward().unwrap();
    assert_eq!(g.wrt(x).data(), &[6.0]);
}

#[test]
fn sum_of_softmax_has_exactly_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let tape = Tape::new();
        let z = tape.param(random(&mut rng, &[1, 6], 20.0));
        let g = z.softmax().sum().backward().unwrap();
        assert!(g.wrt(z).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn non_scalar_root_is_rejected() {
    let tape = Tape::<f64>::new();
    let x = tape.param(Tensor::zeros(&[2, 2]));
    assert!(matches!(x.tanh().backward(), Err(AutodiffError::NotScalar { .. })));
}

#[test]
fn unreachable_leaf_gets_bitwise_zero() {
    let tape = Tape::new();
    let used = tape.param(t(&[1, 2], &[1.0, -2.0]));
    let unused = tape.param(t(&[3, 1], &[5.0, 6.0, 7.0]));
    let _ = unused.tanh();
    let g = used.abs().sum().backward().unwrap();
    assert_eq!(g.wrt(unused).shape(), &[3, 1]);
    assert!(g.wrt(unused).data().iter().all(|v| v.to_bits() == 0));
    assert_eq!(g.wrt(used).data(), &[1.0, -1.0]);
}

#[test]
fn finite_diff_square_is_tight() {
    let err = finite_diff_check::<f64, AutodiffError, _>(
        |_, x| x[0].mul(x[0]),
        &[Tensor::scalar(3.0)],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn finite_diff_catches_a_missing_gradient_path() {
    // x * stop_gradient(x): the value is x^2 but the tape only sees one factor.
    let err = finite_diff_check::<f64, AutodiffError, _>(
        |tape, x| x[0].mul(tape.constant(x[0].value())),
        &[Tensor::scalar(3.0)],
        1e-5,
    )
    .unwrap();
    assert!((err - 1.0 / 3.0).abs() < 1e-6, "{err}");
    // A tiny but wrong component on top of a large value is still caught.
    let err = finite_diff_check::<f64, AutodiffError, _>(
        |tape, x| {
            let big = x[0].scale(1e3);
            let tiny = x[1].mul(tape.constant(x[1].value()))?.scale(1e-2);
            big.add(tiny)
        },
        &[Tensor::scalar(1.0), Tensor::scalar(1.0)],
        1e-5,
    )
    .unwrap();
    assert!(err > 1e-3, "{err}");
}

#[test]
fn finite_diff_constant_is_zero() {
    let err = finite_diff_check::<f64, AutodiffError, _>(
        |tape, _| Ok(tape.scalar(4.0)),
        &[t(&[3], &[1.0, 2.0, 3.0])],
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn finite_diff_rejects_non_scalar_program() {
    let res = finite_diff_check::<f64, AutodiffError, _>(|_, x| Ok(x[0].tanh()), &[t(&[2], &[0.1, 0.2])], 1e-5);
    assert!(matches!(res, Err(AutodiffError::NotScalar { .. })));
}

#[test]
fn finite_diff_negative_log_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let z = random(&mut rng, &[1, 6], 2.0);
        let err = finite_diff_check::<f64, AutodiffError, _>(
            |_, x| Ok(x[0].log_softmax().slice(1, 0, 1)?.neg()),
            &[z],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

/// Every primitive composed into a scalar, checked at random points.
type Program = for<'a, 't> fn(&'a [Var<'t, f64>]) -> Result<Var<'t, f64>, AutodiffError>;

fn primitive_programs() -> Vec<(&'static str, Vec<Vec<usize>>, Program)> {
    vec![
        ("matmul", vec![vec![2, 3], vec![3, 4]], |x| Ok(x[0].matmul(x[1])?.tanh().sum())),
        ("add", vec![vec![2, 3], vec![2, 3]], |x| Ok(x[0].add(x[1])?.mul(x[0])?.sum())),
        ("sub", vec![vec![2, 3], vec![2, 3]], |x| Ok(x[0].sub(x[1])?.mul(x[1])?.sum())),
        ("mul", vec![vec![4], vec![4]], |x| Ok(x[0].mul(x[1])?.mul(x[0])?.sum())),
        ("scalar-mul", vec![vec![1], vec![2, 2]], |x| Ok(x[0].mul(x[1])?.tanh().sum())),
        ("scale", vec![vec![3]], |x| Ok(x[0].scale(-2.5).tanh().sum())),
        ("sigmoid", vec![vec![5]], |x| Ok(x[0].sigmoid().mul(x[0])?.sum())),
        ("tanh", vec![vec![5]], |x| Ok(x[0].tanh().mul(x[0])?.sum())),
        ("exp", vec![vec![5]], |x| Ok(x[0].exp().mean())),
        ("ln", vec![vec![5]], |x| Ok(x[0].mul(x[0])?.add(x[0].tape().scalar(0.5))?.ln()?.sum())),
        ("softmax", vec![vec![2, 4], vec![2, 4]], |x| Ok(x[0].softmax().mul(x[1])?.sum())),
        ("log-softmax", vec![vec![2, 4], vec![2, 4]], |x| Ok(x[0].log_softmax().mul(x[1])?.sum())),
        ("concat", vec![vec![2, 1], vec![2, 3]], |x| {
            let c = x[0].tape().concat(&[x[0], x[1]], 1)?;
            Ok(c.tanh().mul(c)?.sum())
        }),
        ("slice", vec![vec![3, 4]], |x| Ok(x[0].slice(1, 1, 3)?.slice(0, 2, 3)?.exp().sum())),
        ("reshape", vec![vec![2, 3]], |x| Ok(x[0].reshape(&[3, 2])?.softmax().slice(1, 0, 1)?.sum())),
        ("tile-rows", vec![vec![1, 3], vec![4, 3]], |x| Ok(x[0].tile_rows(4)?.mul(x[1])?.tanh().sum())),
        ("norm", vec![vec![3, 2]], |x| Ok(x[0].norm().mean())),
        ("abs", vec![vec![6]], |x| Ok(x[0].abs().mul(x[0])?.sum())),
    ]
}

#[test]
fn every_primitive_passes_gradient_check_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (name, shapes, program) in primitive_programs() {
        for trial in 0..100 {
            let point: Vec<Tensor<f64>> = shapes.iter().map(|s| random(&mut rng, s, 1.5)).collect();
            let err = finite_diff_check::<f64, AutodiffError, _>(|_, x| program(x), &point, 1e-5).unwrap();
            assert!(err <= 1e-4, "{name} trial {trial}: relative error {err}");
        }
    }
}

fn lstm_step_norm<'t>(x: &[Var<'t, f64>]) -> Result<Var<'t, f64>, AutodiffError> {
    // x: input (1,3), h (1,8), c (1,8), w_ih (3,32), w_hh (8,32), b (1,32)
    let gates = x[0].matmul(x[3])?.add(x[1].matmul(x[4])?)?.add(x[5])?;
    let i = gates.slice(1, 0, 8)?.sigmoid();
    let f = gates.slice(1, 8, 16)?.sigmoid();
    let g = gates.slice(1, 16, 24)?.tanh();
    let o = gates.slice(1, 24, 32)?.sigmoid();
    let c = f.mul(x[2])?.add(i.mul(g)?)?;
    let h = o.mul(c.tanh())?;
    Ok(h.mul(h)?.sum())
}

#[test]
fn lstm_step_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let shapes = [[1, 3], [1, 8], [1, 8], [3, 32], [8, 32], [1, 32]];
    for _ in 0..100 {
        // Weights within ±0.5 keep the gates unsaturated; saturated gates give
        // gradients below the roundoff floor of the central difference.
        let point: Vec<Tensor<f64>> = shapes.iter().map(|s| random(&mut rng, s, 0.5)).collect();
        let err = finite_diff_check::<f64, AutodiffError, _>(|_, x| lstm_step_norm(x), &point, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn identical_programs_give_identical_bits() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shapes = [[1, 3], [1, 8], [1, 8], [3, 32], [8, 32], [1, 32]];
        let tape = Tape::new();
        let vars: Vec<_> = shapes.iter().map(|s| tape.param(random(&mut rng, s, 1.0))).collect();
        let root = lstm_step_norm(&vars).unwrap();
        let g = root.backward().unwrap();
        let mut bits = vec![root.item().unwrap().to_bits()];
        for v in &vars {
            bits.extend(g.wrt(*v).data().iter().map(|x| x.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn f32_tape_works() {
    let tape = Tape::<f32>::new();
    let x = tape.param(Tensor::scalar(2.0f32));
    let g = x.mul(x).unwrap().mul(x).unwrap().backward().unwrap();
    assert_eq!(g.wrt(x).data(), &[12.0f32]);
}

proptest! {
    #[test]
    fn softmax_rows_are_positive_and_normalized(values in prop::collection::vec(-50.0f64..50.0, 1..24), cols in 1usize..6) {
        let rows = values.len() / cols;
        prop_assume!(rows > 0);
        let data = values[..rows * cols].to_vec();
        let tape = Tape::new();
        let y = tape.constant(t(&[rows, cols], &data)).softmax().value();
        for row in y.data().chunks(cols) {
            prop_assert!(row.iter().all(|&p| p > 0.0));
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn concat_then_slice_recovers_parts(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 4)) {
        let tape = Tape::new();
        let va = tape.constant(t(&[2, 3], &a));
        let vb = tape.constant(t(&[2, 2], &b));
        let c = tape.concat(&[va, vb], 1).unwrap();
        let left = c.slice(1, 0, 3).unwrap().value();
        let right = c.slice(1, 3, 5).unwrap().value();
        prop_assert_eq!(left.data(), &a[..]);
        prop_assert_eq!(right.data(), &b[..]);
    }
}

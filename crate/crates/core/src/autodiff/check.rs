use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Compares tape gradients of a scalar program against central differences.
///
/// `program` is evaluated once on a recording tape with every tensor of
/// `point` registered as a trainable leaf, then twice per coordinate with
/// that coordinate moved by `±step`. Returns the largest
/// `|analytic - numeric| / max(floor, |analytic| + |numeric|)` over all
/// coordinates. `floor` is a thousandth of the largest `|analytic| + |numeric|`
/// (at least 1e-8): components far below the gradient's scale are measured
/// against that scale, since round-off in the difference quotient would
/// otherwise dominate them.
pub fn finite_diff_check<T, E, F>(program: F, point: &[Tensor<T>], step: T) -> Result<T, E>
where
    T: Scalar,
    E: From<AutodiffError>,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>, E>,
{
    assert!(step > T::zero(), "finite difference step must be positive");

    let evaluate = |inputs: &[Tensor<T>]| -> Result<T, E> {
        let tape = Tape::new();
        let vars: Vec<Var<'_, T>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = program(&tape, &vars)?;
        Ok(out.item().ok_or_else(|| AutodiffError::NotScalar { shape: out.shape() })?)
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_, T>> = point.iter().map(|t| tape.param(t.clone())).collect();
    let root = program(&tape, &vars)?;
    let grads = tape.backward(root)?;

    let two = T::of(2.0);
    let mut pairs = Vec::new();
    let mut probe = point.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for j in 0..point[i].len() {
            let original = point[i].data()[j];
            probe[i].data_mut()[j] = original + step;
            let plus = evaluate(&probe)?;
            probe[i].data_mut()[j] = original - step;
            let minus = evaluate(&probe)?;
            probe[i].data_mut()[j] = original;
            pairs.push((analytic.data()[j], (plus - minus) / (two * step)));
        }
    }

    let scale = pairs.iter().fold(T::zero(), |m, &(a, n)| m.max(a.abs() + n.abs()));
    let floor = T::of(1e-8).max(T::of(1e-3) * scale);
    let mut worst = T::zero();
    for (a, n) in pairs {
        let err = (a - n).abs() / floor.max(a.abs() + n.abs());
        if err > worst || err.is_nan() {
            worst = err;
        }
    }
    Ok(worst)
}

use crate::autodiff::Tensor;
use crate::config::TrainConfig;
use crate::scalar::Scalar;

/// Adam moments for every parameter tensor plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: &TrainConfig, shapes: &[&[usize]]) -> Self {
        let zeros: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Self {
            learning_rate: T::of(config.learning_rate),
            beta1: T::of(config.adam_beta1),
            beta2: T::of(config.adam_beta2),
            epsilon: T::of(config.adam_epsilon),
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (T::one() - self.beta1) * gi;
                *vi = self.beta2 * *vi + (T::one() - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Scales `grads` so their global norm is at most `max_norm` (no-op for
/// `max_norm <= 0`). Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    let norm = grads.iter().map(Tensor::squared_norm).sum::<T>().sqrt();
    if max_norm > T::zero() && norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
    norm
}

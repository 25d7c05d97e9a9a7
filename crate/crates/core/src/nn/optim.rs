//! Parameter update rules.

use super::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for a fixed list of parameter buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub first_moment: Vec<Vec<S>>,
    pub second_moment: Vec<Vec<S>>,
    pub step_count: u64,
}

impl<S: Scalar> AdamState<S> {
    /// Zeroed moments shaped like `sizes`.
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let first_moment: Vec<Vec<S>> = sizes.into_iter().map(|n| vec![S::zero(); n]).collect();
        let second_moment = first_moment.clone();
        Self {
            first_moment,
            second_moment,
            step_count: 0,
        }
    }

    /// One bias-corrected Adam step over every `(param, grad)` pair, in order.
    pub fn step<'a>(
        &mut self,
        pairs: impl IntoIterator<Item = (&'a mut [S], &'a [S])>,
        lr: S,
    ) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (S::lit(ADAM_BETA1), S::lit(ADAM_BETA2));
        let c1 = S::one() - b1.powi(t);
        let c2 = S::one() - b2.powi(t);
        let eps = S::lit(ADAM_EPS);
        let mut used = 0;
        for ((param, grad), (m, v)) in pairs
            .into_iter()
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            assert_eq!(param.len(), grad.len(), "adam: gradient shape mismatch");
            assert_eq!(param.len(), m.len(), "adam: state shape mismatch");
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (S::one() - b1) * g;
                v[i] = b2 * v[i] + (S::one() - b2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                param[i] = param[i] - lr * mhat / (vhat.sqrt() + eps);
            }
            used += 1;
        }
        assert_eq!(used, self.first_moment.len(), "adam: parameter count mismatch");
    }
}

/// Plain gradient descent, `p -= lr * g`.
pub fn sgd_step<S: Scalar>(param: &mut [S], grad: &[S], lr: S) {
    assert_eq!(param.len(), grad.len(), "sgd: gradient shape mismatch");
    for (p, &g) in param.iter_mut().zip(grad) {
        *p = *p - lr * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_first_step_keeps_params() {
        let mut p = vec![0.3f32, -1.2];
        let mut st = AdamState::new([2]);
        st.step([(&mut p[..], &[0.0f32, 0.0][..])], 0.01);
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_has_magnitude_lr_regardless_of_gradient_scale() {
        // m̂ = g and v̂ = g² at t = 1, so the delta is lr·g/(|g|+eps).
        for g in [1e-3f64, 0.5, 40.0] {
            let mut p = vec![1.0f64];
            let mut st = AdamState::new([1]);
            st.step([(&mut p[..], &[g][..])], 0.01);
            let expected = 0.01 * g / (g + ADAM_EPS);
            assert!(((1.0 - p[0]) - expected).abs() < 1e-12);
            assert!(((1.0 - p[0]) - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_loss_decreases_after_warmup() {
        // Scalar simulation of Adam on f(x) = x²/2, reference computed inline in f64.
        let mut x = vec![2.0f64];
        let mut st = AdamState::new([1]);
        let mut losses = vec![];
        for _ in 0..150 {
            let g = [x[0]];
            st.step([(&mut x[..], &g[..])], 0.01);
            losses.push(0.5 * x[0] * x[0]);
        }
        assert!(losses.windows(2).skip(5).all(|w| w[1] <= w[0]));
        assert!(losses[149] < losses[0]);
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = vec![1.0f64];
        sgd_step(&mut p, &[0.5], 0.001);
        assert!((p[0] - 0.9995).abs() < 1e-15);
        sgd_step(&mut p, &[123.0], 0.0);
        assert!((p[0] - 0.9995).abs() < 1e-15);
    }

    #[test]
    fn sgd_and_adam_agree_on_matched_scalar_probe() {
        // With a unit gradient Adam's first step is lr·g/|g|, the same as SGD with lr/|g|.
        let g = 0.25f64;
        let mut a = vec![0.0f64];
        let mut st = AdamState::new([1]);
        st.step([(&mut a[..], &[g][..])], 0.01);
        let mut s = vec![0.0f64];
        sgd_step(&mut s, &[g], 0.01 / g);
        assert!((a[0] - s[0]).abs() < 1e-6);
    }
}

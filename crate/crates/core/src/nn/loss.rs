use super::scalar::Scalar;

/// Two-class softmax probabilities, max-shifted for stability.
pub fn softmax2<S: Scalar>(logits: [S; 2]) -> [S; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Cross-entropy `-log p(label)` and its gradient `softmax - onehot` w.r.t. the logits.
pub fn softmax_xent<S: Scalar>(logits: [S; 2], label: u8) -> (S, [S; 2]) {
    debug_assert!(label < 2);
    let l = label as usize;
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    let loss = (lse - logits[l]).max(S::zero());
    let p = softmax2(logits);
    let mut grad = p;
    grad[l] = grad[l] - S::one();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_cost_ln2() {
        let (loss, grad) = softmax_xent([0.0f64, 0.0], 0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 0.6931).abs() < 5e-5);
        assert_eq!(grad, [-0.5, 0.5]);
    }

    #[test]
    fn confident_correct_prediction_is_nearly_free() {
        let (loss, _) = softmax_xent([10.0f64, -10.0], 0);
        assert!(loss < 1e-8);
        let (loss32, _) = softmax_xent([10.0f32, -10.0], 0);
        assert!(loss32 < 1e-8);
    }

    #[test]
    fn huge_logits_stay_finite() {
        let (loss, grad) = softmax_xent([1e4f32, -1e4], 1);
        assert!(loss.is_finite() && grad.iter().all(|g| g.is_finite()));
        assert!((loss - 2e4).abs() / 2e4 < 1e-6);
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(a in -8.0f64..8.0, b in -8.0f64..8.0, label in 0u8..2) {
            let (_, grad) = softmax_xent([a, b], label);
            let h = 1e-5;
            let fd0 = (softmax_xent([a + h, b], label).0 - softmax_xent([a - h, b], label).0) / (2.0 * h);
            let fd1 = (softmax_xent([a, b + h], label).0 - softmax_xent([a, b - h], label).0) / (2.0 * h);
            for (fd, g) in [(fd0, grad[0]), (fd1, grad[1])] {
                let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
                prop_assert!(rel < 1e-4 || (fd - g).abs() < 1e-9, "fd {} vs {}", fd, g);
            }
        }

        #[test]
        fn probabilities_sum_to_one(a in -50.0f32..50.0, b in -50.0f32..50.0, label in 0u8..2) {
            let p = softmax2([a, b]);
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
            prop_assert!(softmax_xent([a, b], label).0 >= 0.0);
        }
    }
}

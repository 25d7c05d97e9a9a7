use super::scalar::Scalar;
use super::tensor::Tensor;

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v.max(S::zero()))
}

/// Upstream gradient masked by `x > 0`, where `x` is the ReLU input.
pub fn relu_backward<S: Scalar>(x: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= S::zero() {
            *gv = S::zero();
        }
    }
    g
}

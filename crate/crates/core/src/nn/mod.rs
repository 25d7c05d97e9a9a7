//! Small dense engine: exactly the layers and optimizers the detector needs.

mod activation;
mod batchnorm;
mod conv;
mod loss;
mod optim;
mod scalar;
mod tensor;

pub use activation::{relu, relu_backward};
pub use batchnorm::{BatchNorm, BnCache, Mode, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub use loss::{softmax2, softmax_xent};
pub use optim::{sgd_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use scalar::Scalar;
pub use tensor::Tensor;

//! Layer primitives with hand-written backward passes, and the optimizer.

mod activation;
mod conv;
mod gemm;
pub mod gradcheck;
mod linear;
mod loss;
mod optim;
mod pool;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvLayer};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use linear::{linear, linear_backward, LinearGrads, LinearLayer};
pub use loss::{softmax_cross_entropy, CrossEntropy};
pub use optim::{sgd_momentum_step, GradientStore};
pub use pool::{maxpool2, maxpool2_backward};

//! Forward and backward passes for the layers the CAM network uses, plus
//! momentum SGD.

mod activation;
mod conv;
mod gemm;
mod loss;
mod maxpool;
mod sgd;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d_backward, conv2d_forward};
pub(crate) use conv::conv2d_backward_impl;
pub use loss::softmax2_xent;
pub use maxpool::{maxpool_backward, maxpool_forward, MaxPoolIndices};
pub use sgd::{sgd_update, ParamSet};

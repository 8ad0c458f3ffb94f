//! Forward and backward kernels for every layer kind the model zoo uses.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod loss;
pub mod pool;

pub use activation::{dropout, leaky_relu, leaky_relu_backward, DropoutSpec, Mode};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer};
pub use dense::{concat_features, fc_affine, fc_backward, fc_forward, split_features, FcGrads, FcLayer};
pub use loss::{argmax, in_top_k, softmax_xent, softmax_xent_batch, BatchLoss};
pub use pool::{maxpool_backward, maxpool_forward, PoolSpec};

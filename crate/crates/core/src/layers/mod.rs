//! Forward and backward kernels. Every forward returns exactly what its
//! backward needs; nothing is recorded on a hidden tape.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod noise;
pub mod pool;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{BatchNorm2d, BatchNormCache};
pub use conv::{conv2d_backward, conv2d_forward, ConvFilterParams, ConvGrads};
pub use linear::{linear_backward, linear_forward, LinearParams};
pub use loss::softmax_xent;
pub use noise::{noise_backward, noise_forward, NoiseGranularity};
pub use pool::{gap_backward, gap_forward};

/// Train mode enables noise sampling and batch statistics; eval mode is a
/// pure deterministic function of the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

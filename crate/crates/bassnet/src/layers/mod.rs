//! Layer primitives: the two convolution kinds, fully-connected layers,
//! ReLU, dropout, softmax and the cross-entropy loss, each with an exact
//! reverse-mode companion.
//!
//! All convolutions are valid (no padding). Both convolution kinds are
//! correlations: filters slide as inner products without a kernel flip.

mod conv;
mod dropout;
mod fc;
mod softmax;

pub use conv::{
    conv_lambda_backward, conv_lambda_forward, conv_xy_backward, conv_xy_forward, ConvGrads,
    ConvLambdaSpec, ConvParams, ConvXySpec,
};
pub use dropout::dropout_forward;
pub use fc::{fc_backward, fc_forward, FcGrads, FcParams, FcSpec};
pub use softmax::{cross_entropy_loss, softmax};

use crate::tensor::Volume;

/// Whether stochastic layers (dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// ReLU over a flat vector.
pub fn relu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// ReLU gradient over a flat vector: passes the cotangent where the primal
/// input was strictly positive.
pub fn relu_backward_vec(input: &[f64], d_out: &[f64]) -> Vec<f64> {
    debug_assert_eq!(input.len(), d_out.len());
    input
        .iter()
        .zip(d_out)
        .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
        .collect()
}

/// ReLU gradient over a volume.
pub fn relu_backward_volume(input: &Volume, d_out: &Volume) -> Volume {
    debug_assert_eq!(input.shape(), d_out.shape());
    let data = relu_backward_vec(input.data(), d_out.data());
    Volume::from_vec(input.shape(), data).expect("shape preserved")
}

//! Minimal differentiable-operator core.
//!
//! Dense f64 tensors plus the handful of neural operations the detector and
//! recognizer are built from, each paired with an analytic backward pass and
//! verifiable by the central-difference checker in [`gradcheck`]. All
//! operations are pure functions; there is no autodiff tape — callers compose
//! the `*_backward` functions in reverse order.

pub mod checkpoint;
pub mod gradcheck;
pub mod lstm;
pub mod ops;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use lstm::{
    bilstm_backward, bilstm_encode, bilstm_encode_cached, lstm_step, lstm_step_backward,
    lstm_step_cached, BilstmCache, LstmCache, LstmGrads, LstmParams,
};
pub use ops::{
    add_channel_bias, affine, affine_backward, ce_from_logits, channel_bias_backward, conv2d,
    conv2d_backward, relu, relu_backward, sigmoid, softmax, softmax_backward, softplus, Conv2dSpec,
};
pub use tensor::{Gradients, Tensor};

//! Desk-scale multi-oriented text spotting: detection, aligned pooling,
//! attention recognition and evaluation, built on a small hand-verified
//! differentiable core.
//!
//! The crate is organized around six modules:
//!
//! - [`ndops`] — dense f64 tensors and the fixed operator set (affine,
//!   convolution, softmax, LSTM) with analytic backward passes and a
//!   finite-difference checker.
//! - [`geometry`] — quadrilaterals, five-parameter rotated boxes, polygon
//!   IoU via convex clipping, and non-maximum suppression.
//! - [`text_align`] — grid sampling inside an arbitrary quadrilateral with
//!   differentiable bilinear interpolation, plus RoI-pool and RoI-align
//!   baselines for ablations.
//! - [`recognizer`] — sequence encoding and attention decoding with
//!   character-level supervision (alignment, mask and word losses).
//! - [`harness`] — synthetic glyph dataset, the stand-in backbone and
//!   detection heads, the joint loss, the staged training curriculum and
//!   model persistence.
//! - [`evalkit`] — detection / end-to-end / word-spotting protocols and
//!   lexicon-constrained transcript correction.

pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod harness;
pub mod ndops;
pub mod recognizer;
pub mod text_align;

pub use error::{Error, Result};
pub use ndops::{Gradients, Tensor};

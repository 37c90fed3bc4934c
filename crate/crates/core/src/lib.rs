//! Differentially private multimodal task vectors.
//!
//! Many demonstration chunks are aggregated into one task vector in activation
//! space. Each chunk's activations are clipped per layer, averaged, and
//! released once with calibrated Gaussian noise; injection heads are chosen
//! either on public data or privately with Gumbel selection over a limited
//! candidate set. Inference replaces the chosen heads' activations with the
//! released vector and costs no further privacy budget.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod construction;
pub mod dp_mech;
pub mod error;
pub mod example;
pub mod model;
pub mod inference;
pub mod privacy;
pub mod seed;
pub mod selection;
pub mod tensor;
pub mod toy_model;

pub use error::{Error, Result};

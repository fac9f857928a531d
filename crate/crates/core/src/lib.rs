//! Sequential CNN inference with forward-backward saliency.
//!
//! A model is an [`Architecture`] plus a [`WeightArchive`]. [`forward_trace`]
//! records every intermediate activation for one image; the backward engines
//! in [`fbi`] and [`baselines`] turn that trace into an input-shaped
//! [`SaliencyMap`] for a chosen class.

pub mod baselines;
pub mod error;
pub mod fbi;
pub mod image;
pub mod model;
pub mod ops;
pub mod saliency;
pub mod tensor;

pub use baselines::{backward_pass, explain_deconvnet, explain_guided};
pub use error::{Error, Result};
pub use fbi::{explain_fbi, FbiConfig};
pub use model::{
    forward_trace, load_architecture, load_weights, save_weights, validate, ActivationTrace,
    Architecture, Model, Prediction, WeightArchive,
};
pub use saliency::{Method, ReluRule, SaliencyMap};
pub use tensor::{Shape, Tensor};

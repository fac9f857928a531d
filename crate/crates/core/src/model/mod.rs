//! Loading, validating and running sequential CNNs.

pub mod arch;
pub mod runtime;
pub mod weights;

pub use arch::{load_architecture, Activation, Architecture, LayerKind, LayerSpec};
pub use runtime::{forward_trace, validate, ActivationTrace, LayerTrace, Model, Prediction};
pub use weights::{load_weights, save_weights, WeightArchive};

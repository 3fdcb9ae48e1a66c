//! Residual convolutional network: topology, parameters, forward and
//! backward passes, and the checkpoint format.

mod checkpoint;
mod config;
pub mod layers;
mod model;
mod params;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader, TensorEntry,
    FORMAT_VERSION, MAGIC,
};
pub use config::{BlockLayout, NetConfig, ParamKind, ParamSpec, StemConfig};
pub use model::{
    activation_pattern, apply_running_stats, forward, forward_train, forward_with_capture, gradients, softmax,
    ActivationPattern, BatchStats, ForwardCapture, GradientOutput,
};
pub use params::{build_model, is_trainable, transfer_weights, ParamSet, ParameterSet};
pub use tensor::{Scalar, Tensor};

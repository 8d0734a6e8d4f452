//! A small tensor and layer library with exact backpropagation, enough to
//! train the signature embedding network on the CPU.

mod model_file;
mod network;
pub mod ops;
mod optim;
mod preset;
mod tensor;

use thiserror::Error;

pub use model_file::{
    decode_model, encode_model, load_model, save_model, ModelFormatError, ModelHeader, FORMAT_VERSION,
};
pub use network::{derived_rng, LayerSpec, Mode, Network, Trace};
pub use optim::{OptimizerConfig, RmsProp};
pub use preset::Preset;
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parameter mismatch: {0}")]
    Params(String),
    #[error("backward called without a matching forward pass")]
    NoForwardCache,
}

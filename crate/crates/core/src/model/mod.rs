//! The quality network: a multi-scale convolutional feature extractor, an LQ
//! encoder and a deeper difference encoder built from MLP-mixer blocks, and a
//! two-layer regressor.
//!
//! Teacher and student are the same architecture with different parameters.

mod config;
mod network;

pub use config::{ArchConfig, DiffInputMode, LAYER_NORM_EPS, STAGE_STRIDES};
pub use network::{init_params, parameter_count, parameter_shapes, predict, ForwardTrace, ForwardVars, Network};

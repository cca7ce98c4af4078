//! Core of a reference-guided image quality assessment pipeline.
//!
//! A full-reference teacher scores a distorted image against its pixel-aligned
//! original; a student with the same architecture learns to score against an
//! arbitrary high-quality image by matching the teacher's difference-encoder
//! features. This crate holds everything that does not touch the filesystem:
//!
//! - [`graph`], [`optim`]: a small tensor engine with reverse-mode autodiff and Adam
//! - [`model`]: multi-scale patch features, dual MLP-mixer encoders and the regressor
//! - [`data`]: synthetic images, distortions, pseudo-MOS labels and patch sampling
//! - [`train`]: teacher training, student distillation and the checkpoint codec
//! - [`metrics`]: SRCC, KRCC, logistic-corrected PLCC and shuffle evaluation
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod graph;
mod kernels;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use kv::KvText;
pub use model::{ArchConfig, DiffInputMode};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{BoundParams, ModelParams, Parameter};
pub use real::Real;
pub use tensor::Tensor;

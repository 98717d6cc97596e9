//! BiLSTM-max text classification trained with a weighted mix of
//! cross-entropy, adversarial, entropy-minimization and virtual adversarial
//! losses, on a small reverse-mode autodiff core.
//!
//! The numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the scalar for the common cases.

pub mod analysis;
pub mod batching;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod sweep;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = graph::Graph<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type EmbeddingMatrix = embedding::EmbeddingMatrix<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph32 = graph::Graph<f32>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type EmbeddingMatrix32 = embedding::EmbeddingMatrix<f32>;

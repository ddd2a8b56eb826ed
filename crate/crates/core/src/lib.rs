//! Cross-modal image/recipe embedding with self-attention recipe encoding,
//! a BatchHard triplet retrieval loss and a KL-based semantic-consistency
//! loss, built on a small reverse-mode tensor engine.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod optim;
pub mod retrieval;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;

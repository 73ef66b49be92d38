//! Deterministic-decoding variational autoencoders.
//!
//! The crate bundles bounded-support proposal kernels with closed-form KL
//! divergences, the temperature relaxation of argmax decoding, a small
//! reverse-mode engine, GRU/MLP encoder-decoders, the training objectives and
//! an experiment trainer for the synthetic bit-string and binarized MNIST
//! setups.

pub mod config;
pub mod data;
pub mod diffengine;
pub mod error;
pub mod kernels;
pub mod objective;
pub mod quadrature;
pub mod relaxation;
pub mod seqmodel;
pub mod trainer;

pub use error::{Error, Result};

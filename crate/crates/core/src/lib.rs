//! Sequence-length reducing scaled dot-product attention.
//!
//! The query matrix of ordinary scaled dot-product attention is multiplied
//! by a trainable `n_out x n_in` scaling matrix, so the attention output has
//! `n_out` tokens regardless of the input length. Stacked as encoder and
//! decoder it forms an autoencoder that squeezes `N` tokens into `L` latent
//! tokens and reconstructs the original sequence.
//!
//! Modules, bottom up:
//!
//! * [`tensor`]: dense tensors and a reverse-mode differentiation tape
//! * [`attention`]: QKV projection, the scaling matrix, attention itself
//! * [`model`]: the autoencoder, its initialisation and checkpoints
//! * [`data`]: vocabularies, fixed-length samples, synthetic corpora
//! * [`train`]: AdamW, the learning-rate warm-down, early stopping
//! * [`experiments`]: latent-length sweeps, summaries and SVG charts

pub mod attention;
pub mod data;
pub mod error;
pub mod experiments;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Var};

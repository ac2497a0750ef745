//! Lesion-focused multi-scale VQ tokenization, measurement-conditioned
//! next-scale autoregressive synthesis, and the evaluation numerics that go
//! with them.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] loads image/mask/label triples, splits them and renders the
//!   built-in toy lesion dataset.
//! * [`tokenizer`] is the multi-scale VQ autoencoder and its training loss.
//! * [`measurements`] extracts the 14 lesion scores from an image and mask.
//! * [`conditioning`] turns scores and class labels into condition tokens and
//!   keeps the per-class average measurement codebook.
//! * [`var`] is the block-causal next-scale transformer and the synthesis
//!   pipelines built on top of it.
//! * [`eval`] holds FID, IS, the FID confusion matrix, feature export and the
//!   downstream classification protocol.

pub mod conditioning;
pub mod data;
pub mod error;
pub mod eval;
pub mod measurements;
pub mod nn;
pub mod tokenizer;
pub mod var;

/// The tensor library the public API is written against.
pub use candle_core as candle;
pub use error::{Error, Result};

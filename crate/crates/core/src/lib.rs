//! Word-aligned audio/text fusion for speech-based cognitive screening.
//!
//! The pipeline: timestamped transcripts and frame-level acoustic features
//! are aligned into equal-length token sequences (with pause tokens for
//! inter-word silences), fused by a small Transformer with gated
//! cross-attention, trained under k-fold or leave-one-subject-out
//! protocols, and explained with Integrated Gradients.

pub mod alignment;
pub mod error;
pub mod explain;
pub mod io;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

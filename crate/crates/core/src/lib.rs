//! Prototype-based interpretable defect classification for tomographic
//! patch data.
//!
//! The crate implements the full desk-scale pipeline: synthetic volume
//! generation and patch sampling, a compact trainable encoder (or
//! file-backed embeddings), a prototype head over a standardized embedding
//! space, the composite training objective with certified analytic
//! gradients, AdamW optimization with plateau scheduling and early
//! stopping, calibration and bootstrap evaluation, and slice-level defect
//! maps with prototype attribution.

pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod harness;
pub mod head;
pub mod io;
pub mod loss;
pub mod maps;
pub mod numerics;
pub mod pipeline;
pub mod train;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

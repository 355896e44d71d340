//! Cross-lingual stitching of frozen models: a low-resource sentence is
//! encoded by a frozen translator encoder, aligned into a frozen high-resource
//! language model through trainable adapters and bridge transformers, and
//! decoded back by a frozen translator decoder.
//!
//! Everything runs on a small reverse-mode autograd engine in `f64`, over a
//! synthetic bilingual world whose ground-truth translation is known.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod pretrain;
pub mod pipeline;
pub mod runs;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod world;

pub use error::{CheckpointError, Error, Result};
pub use tensor::{Tensor, Tape, Var};

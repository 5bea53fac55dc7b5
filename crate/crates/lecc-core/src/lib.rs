//! Continual-learning malware classification for edge devices.
//!
//! The crate is organized bottom-up:
//!
//! - [`nn`]: deterministic tensor kernel, layers, AdamW
//! - [`data`]: CSV ingest, label codec, textualization, vocab, splits
//! - [`model`]: micro-transformer backbone, classification head, checkpoints
//! - [`lora`]: low-rank adapters, adapter files, bundles, footprint
//! - [`continual`]: round training, multi-adapter inference, metrics
//! - [`coord`]: exchange protocol, coordinator server, edge client
//! - [`synth`]: seeded synthetic traffic generator for experiments
//! - [`report`]: run report structures and CSV/JSON rendering

pub(crate) mod bytes;
pub mod continual;
pub mod coord;
pub mod data;
pub mod error;
pub mod lora;
pub mod model;
pub mod nn;
pub mod report;
pub mod synth;

pub use error::{Error, Result};

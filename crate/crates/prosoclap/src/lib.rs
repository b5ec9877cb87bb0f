//! Contrastive text-prosody pre-training at desk scale.
//!
//! A text encoder learns per-token representations that predict prosody by
//! contrasting them against speech-segment encodings of the same token under
//! different contexts. The crate covers the full pipeline: text frontend,
//! mel features, corpus indexing and batch sampling, both encoders, the
//! contrastive training loop, representation analyses, a frozen-feature
//! prosody probe, and a synthetic corpus generator that makes the whole thing
//! verifiable on one CPU.

pub mod adapter;
pub mod analysis;
pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod model;
pub mod nn;
pub mod pretrain;
pub mod synth;
pub mod verify;
pub mod text;

pub use error::{Error, Result};
pub mod cli;

//! Multimodal human-robot interaction intent detection.
//!
//! The pipeline runs from pose and emotion features to a streaming
//! engagement decision:
//!
//! * [`datamodel`]: frames, sequences, windows, dataset files and checkpoints.
//! * [`features`]: bounding-box normalization and training-split standardization.
//! * [`synthgen`]: procedural approach/pass-by scenarios with known intent onsets.
//! * [`mintrvae`]: the recurrent VAE that synthesizes labeled sequences for rebalancing.
//! * [`intentnet`]: GRU, LSTM and Transformer window classifiers.
//! * [`evalkit`]: metrics, the k-run decision rule, protocols and realism scoring.
//! * [`stream`]: the real-time sliding-window engine.

pub mod datamodel;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod intentnet;
pub mod mintrvae;
pub mod par;
pub mod stream;
pub mod synthgen;

pub use error::{Error, Result};

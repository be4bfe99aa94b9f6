//! Estimating a server's power-consumption class from the sound of its
//! cooling fans.
//!
//! The pipeline cuts a microphone recording into windows aligned with a
//! wattage log, takes DFT magnitudes in the fan band (optionally max-pooled
//! into coarse sub-bands), and trains a small tansig network to predict one
//! of four equal-width power classes. [`synth`] produces recordings with a
//! known load so the whole chain can be checked without field data.

pub mod audio_io;
pub mod error;
pub mod eval;
pub mod labeling;
pub mod mlp;
pub mod pipeline;
pub mod spectral;
pub mod synth;

pub use error::{Error, ErrorFamily, Result};

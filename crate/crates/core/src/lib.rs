//! Radar/5G coexistence toolkit.
//!
//! Synthesizes LFM radar pulse trains and 5G-like interference in a shared
//! band, calibrates their mixtures to exact SINR targets, extracts IQ-frame
//! and spectrogram features, and trains/evaluates a two-stage hierarchical
//! classifier: binary radar detection followed by 6-way waveform
//! identification.

pub mod error;
pub mod features;
pub mod fft;
pub mod interference;
pub mod nn;
pub mod pipeline;
pub mod radar;
pub mod scene;
pub mod signal;

#[doc(hidden)]
pub mod testutil;

pub use error::{Error, Result};

//! Multi-band encoding of wide-band audio for encoders trained at a fixed,
//! lower sample rate.
//!
//! A clip is split into `ceil(f_s / f_m)` bands of width `f_m / 2`, each
//! heterodyned to baseband and resampled to the encoder rate, encoded into a
//! fixed-length functional, and the band functionals are fused for a linear
//! classifier. Baseband and time-expansion baselines, representation
//! analyses and an experiment harness are included.

pub mod analysis;
pub mod band;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod signal_io;

pub use error::{Error, Result};

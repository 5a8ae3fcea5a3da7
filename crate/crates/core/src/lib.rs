//! Ultra-wideband impulse radar activity recognition.
//!
//! The crate is organised along the processing chain:
//!
//! - [`channel`] synthesises baseband frame matrices (slow-time × fast-time) for scripted scenes.
//! - [`dsp`] removes phase jitter, filters along slow-time, subtracts the static background and
//!   detects motion with a peak-average rule over per-bin standard deviations.
//! - [`features`] turns a 400-frame window into the time-domain and Doppler spectrograms.
//! - [`nn`] is a small dense tensor library with the convolution variants, the
//!   reduce-split-transform-merge block, the two-branch network, backpropagation and training.
//! - [`harness`] generates environment-disjoint datasets and computes evaluation metrics.
//! - [`config`] holds the run configuration shared by the command-line driver.
//! - [`io`] reads and writes the binary frame-matrix container.

pub mod channel;
pub mod config;
pub mod dsp;
pub mod error;
pub mod features;
pub mod harness;
pub mod io;
pub mod nn;

pub use error::{Error, Result};
pub use num_complex::Complex64;

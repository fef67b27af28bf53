//! Drift-field training of one-step generators.
//!
//! The crate is organised bottom-up:
//!
//! - [`drift`]: exponential-kernel drift fields (attraction minus repulsion).
//! - [`encoder`]: frozen frame-wise feature extractors with layer taps.
//! - [`generator`]: the one-step map in its direct and conditional forms.
//! - [`signal`]: STFT/iSTFT, spectral compression, synthetic corpora, WAV I/O.
//! - [`metrics`]: SI-SDR, MMD, PCA snapshots.
//! - [`trainer`]: drift targets, the stop-gradient loss, AdamW, the step loop.
//! - [`experiments`]: end-to-end runs behind the `drift` command line tool.

pub mod drift;
pub mod encoder;
pub mod experiments;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod signal;
pub mod trainer;

pub use error::{Error, Result};

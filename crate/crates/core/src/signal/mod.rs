//! Desk-scale acoustic pipeline.

mod compress;
mod stft;
mod synth;
pub mod wav;

pub use compress::Compression;
pub use stft::{SpectralGrid, Stft, StftConfig};
pub use synth::{mix_at_snr, synth_clean, synth_noise, CleanKind, NoiseKind};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Self { samples, sample_rate })
    }

    /// A 16 kHz waveform.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate: self.sample_rate }
    }
}

//! 16-bit PCM WAV and raw little-endian `f64` files.
//!
//! PCM samples map to `i / 32768`, so any value of that form survives a
//! write/read cycle exactly.

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const PCM_SCALE: f64 = 32768.0;

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in w.samples() {
        let q = (s * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format(format!(
            "expected mono 16-bit PCM, got {} channel(s) at {} bits",
            spec.channels, spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_raw_f64(path: impl AsRef<Path>, samples: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_raw_f64(path: impl AsRef<Path>, sample_rate: u32) -> Result<Waveform> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("raw f64 file has {} trailing bytes", bytes.len() % 8)));
    }
    let samples = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Waveform::new(samples, sample_rate)
}

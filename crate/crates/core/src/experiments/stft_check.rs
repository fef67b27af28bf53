//! Round-trip checks of the signal pipeline, run by the `stft-check` task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::metrics::measured_snr_db;
use crate::signal::{mix_at_snr, synth_clean, synth_noise, CleanKind, NoiseKind, SpectralGrid, Stft, Waveform};

pub const ROUND_TRIP_TOL: f64 = 1e-6;
pub const COMPRESSION_TOL: f64 = 1e-12;
pub const SNR_TOL_DB: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StftCheckResult {
    /// Relative L2 error of `istft(stft(w))` on the interior.
    pub round_trip: f64,
    /// Largest elementwise error of `decompress(compress(g))`.
    pub compression: f64,
    /// Largest `|measured - requested|` SNR, dB.
    pub snr: f64,
}

impl StftCheckResult {
    pub fn passed(&self) -> bool {
        self.round_trip < ROUND_TRIP_TOL && self.compression < COMPRESSION_TOL && self.snr < SNR_TOL_DB
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "task": "stft-check",
            "passed": self.passed(),
            "round_trip_rel_error": self.round_trip,
            "compression_max_error": self.compression,
            "snr_max_error_db": self.snr,
        })
    }
}

/// White noise of 16384 samples through the configured STFT, a random
/// spectral grid through compression, and mixtures at every training SNR.
pub fn run_stft_check(cfg: &ExperimentConfig, seed: u64) -> Result<StftCheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stft = Stft::new(cfg.stft)?;
    let x: Vec<f64> = (0..16384).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y = stft.istft(&stft.stft(&Waveform::from_samples(x.clone())?)?)?;
    let w = cfg.stft.window_len;
    let end = y.len() - w;
    let (mut err, mut energy) = (0.0, 0.0);
    for (a, b) in x[w..end].iter().zip(&y.samples()[w..end]) {
        err += (a - b) * (a - b);
        energy += a * a;
    }
    let round_trip = (err / energy).sqrt();

    let bins = cfg.stft.bins();
    let data: Vec<Complex64> = (0..bins * 8)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
        .collect();
    let grid = SpectralGrid::new(bins, 8, data, false)?;
    let back = cfg.compression.decompress(&cfg.compression.compress(&grid)?)?;
    let compression = grid.data().iter().zip(back.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);

    let clean = synth_clean(seed, cfg.data.length, CleanKind::Harmonic)?;
    let mut snr = 0.0f64;
    for (i, &target) in cfg.data.train_snrs.iter().chain([&cfg.data.eval_snr]).enumerate() {
        let noise = synth_noise(seed.wrapping_add(i as u64), cfg.data.length, NoiseKind::ALL[i % 3])?;
        let mix = mix_at_snr(&clean, &noise, target)?;
        snr = snr.max((measured_snr_db(clean.samples(), mix.samples())? - target).abs());
    }
    Ok(StftCheckResult { round_trip, compression, snr })
}

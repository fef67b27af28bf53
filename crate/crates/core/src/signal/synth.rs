//! Synthetic clean and noise signals.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const TARGET_RMS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CleanKind {
    /// 3 to 6 harmonics of a wandering 80-300 Hz fundamental.
    Harmonic,
    /// Amplitude-modulated linear chirp in the 1.5-3.5 kHz band.
    AmChirp,
}

impl std::str::FromStr for CleanKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harmonic" => Ok(Self::Harmonic),
            "am-chirp" | "am_chirp" => Ok(Self::AmChirp),
            _ => Err(Error::InvalidConfig(format!("unknown clean kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    White,
    LowPass,
    BandPass,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::White, NoiseKind::LowPass, NoiseKind::BandPass];
}

fn normalize(mut x: Vec<f64>) -> Result<Waveform> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms == 0.0 {
        return Err(Error::ZeroEnergy("synthesized signal"));
    }
    let g = TARGET_RMS / rms;
    x.iter_mut().for_each(|v| *v *= g);
    Waveform::from_samples(x)
}

/// Deterministic speech-like signal with RMS 0.1.
pub fn synth_clean(seed: u64, length: usize, kind: CleanKind) -> Result<Waveform> {
    if length == 0 {
        return Err(Error::InvalidConfig("length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;
    let env_rate = rng.gen_range(2.0..5.0);
    let env_phase = rng.gen_range(0.0..2.0 * PI);
    let envelope = |t: f64| 0.3 + 0.7 * (0.5 - 0.5 * (2.0 * PI * env_rate * t + env_phase).cos());
    let x = match kind {
        CleanKind::Harmonic => {
            let base = rng.gen_range(100.0..250.0);
            let vib_rate = rng.gen_range(0.5..3.0);
            let vib_depth = rng.gen_range(0.05..0.25);
            let vib_phase = rng.gen_range(0.0..2.0 * PI);
            let n_harm = rng.gen_range(3..=6);
            let amps: Vec<f64> = (1..=n_harm).map(|h| rng.gen_range(0.5..1.0) / h as f64).collect();
            let mut phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            (0..length)
                .map(|n| {
                    let t = n as f64 / sr;
                    let f0 = (base * (1.0 + vib_depth * (2.0 * PI * vib_rate * t + vib_phase).sin())).clamp(80.0, 300.0);
                    let mut v = 0.0;
                    for (h, (a, ph)) in amps.iter().zip(phases.iter_mut()).enumerate() {
                        v += a * ph.sin();
                        *ph += 2.0 * PI * (h + 1) as f64 * f0 / sr;
                    }
                    v * envelope(t)
                })
                .collect()
        }
        CleanKind::AmChirp => {
            let f_start = rng.gen_range(1500.0..3500.0);
            let f_end = rng.gen_range(1500.0..3500.0);
            let am_rate = rng.gen_range(4.0..8.0);
            let dur = length as f64 / sr;
            let mut phase = rng.gen_range(0.0..2.0 * PI);
            (0..length)
                .map(|n| {
                    let t = n as f64 / sr;
                    let f = f_start + (f_end - f_start) * t / dur;
                    let v = phase.sin() * (0.6 + 0.4 * (2.0 * PI * am_rate * t).sin()) * envelope(t);
                    phase += 2.0 * PI * f / sr;
                    v
                })
                .collect()
        }
    };
    normalize(x)
}

/// Second-order (RBJ) filter section.
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(fc: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * fc / SAMPLE_RATE as f64;
        let alpha = w0.sin() / (2.0 * q);
        let cw = w0.cos();
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 - cw) / 2.0 / a0, (1.0 - cw) / a0, (1.0 - cw) / 2.0 / a0],
            a: [-2.0 * cw / a0, (1.0 - alpha) / a0],
        }
    }

    fn bandpass(fc: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * fc / SAMPLE_RATE as f64;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self { b: [alpha / a0, 0.0, -alpha / a0], a: [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

/// Filtered Gaussian white noise with RMS 0.1. Filter parameters are drawn
/// from the seed.
pub fn synth_noise(seed: u64, length: usize, kind: NoiseKind) -> Result<Waveform> {
    if length == 0 {
        return Err(Error::InvalidConfig("length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..length).map(|_| rng.sample(StandardNormal)).collect();
    let x = match kind {
        NoiseKind::White => white,
        NoiseKind::LowPass => Biquad::lowpass(rng.gen_range(2500.0..5000.0), 0.707).apply(&white),
        NoiseKind::BandPass => Biquad::bandpass(rng.gen_range(1000.0..4000.0), rng.gen_range(0.5..1.5)).apply(&white),
    };
    normalize(x)
}

/// `clean + alpha * noise` with `alpha` chosen so the clean-to-scaled-noise
/// energy ratio is exactly `snr_db`.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if clean.len() != noise.len() {
        return Err(Error::DimensionMismatch { expected: clean.len(), found: noise.len() });
    }
    if !snr_db.is_finite() {
        return Err(Error::NonFinite("snr"));
    }
    let ec = clean.energy();
    let en = noise.energy();
    if ec == 0.0 {
        return Err(Error::ZeroEnergy("clean signal"));
    }
    if en == 0.0 {
        return Err(Error::ZeroEnergy("noise signal"));
    }
    let alpha = (ec / (en * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed = clean.samples().iter().zip(noise.samples()).map(|(c, n)| c + alpha * n).collect();
    Waveform::new(mixed, clean.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_is_deterministic_and_normalized() {
        for kind in [CleanKind::Harmonic, CleanKind::AmChirp] {
            let a = synth_clean(7, 8000, kind).unwrap();
            let b = synth_clean(7, 8000, kind).unwrap();
            assert_eq!(a, b);
            assert!((a.rms() - 0.1).abs() < 1e-6);
            assert_ne!(a, synth_clean(8, 8000, kind).unwrap());
        }
        assert!(synth_clean(0, 0, CleanKind::Harmonic).is_err());
    }

    #[test]
    fn noise_is_normalized() {
        for kind in NoiseKind::ALL {
            let n = synth_noise(3, 4000, kind).unwrap();
            assert!((n.rms() - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn snr_definition() {
        let c = synth_clean(1, 4000, CleanKind::Harmonic).unwrap();
        let n = synth_noise(2, 4000, NoiseKind::White).unwrap();
        for snr in [0.0, 10.0] {
            let m = mix_at_snr(&c, &n, snr).unwrap();
            let resid: f64 = m.samples().iter().zip(c.samples()).map(|(a, b)| (a - b).powi(2)).sum();
            let want = c.energy() / 10f64.powf(snr / 10.0);
            assert!((resid - want).abs() <= 1e-10 * want);
        }
        let silent = Waveform::from_samples(vec![0.0; 4000]).unwrap();
        assert!(matches!(mix_at_snr(&c, &silent, 0.0), Err(Error::ZeroEnergy(_))));
        let short = Waveform::from_samples(vec![0.1; 10]).unwrap();
        assert!(mix_at_snr(&c, &short, 0.0).is_err());
    }
}

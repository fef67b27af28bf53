use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Waveform;
use crate::error::{Error, Result};

/// Window-sum-of-squares values at or below this are treated as zero.
const NORMALIZER_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    /// Transform length; frames are zero-padded up to it when larger than
    /// the window.
    pub fft_size: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window_len: 510, hop: 128, fft_size: 510 }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of complete frames in a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }

    /// Signal length produced by synthesis from `frames` frames.
    pub fn synthesis_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window_len
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || self.hop == 0 || self.hop > self.window_len {
            return Err(Error::InvalidConfig(format!(
                "need 2 <= window ({}) and 0 < hop ({}) <= window",
                self.window_len, self.hop
            )));
        }
        if self.fft_size < self.window_len {
            return Err(Error::InvalidConfig(format!(
                "fft size {} is smaller than the window {}",
                self.fft_size, self.window_len
            )));
        }
        Ok(())
    }
}

/// Complex coefficients, `bins` frequencies by `frames` time steps, stored
/// frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    bins: usize,
    frames: usize,
    data: Vec<Complex64>,
    compressed: bool,
}

impl SpectralGrid {
    pub fn new(bins: usize, frames: usize, data: Vec<Complex64>, compressed: bool) -> Result<Self> {
        if data.len() != bins * frames {
            return Err(Error::DimensionMismatch { expected: bins * frames, found: data.len() });
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectral grid"));
        }
        Ok(Self { bins, frames, data, compressed })
    }

    pub fn zeros(bins: usize, frames: usize) -> Self {
        Self { bins, frames, data: vec![Complex64::new(0.0, 0.0); bins * frames], compressed: false }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn is_compressed(&self) -> bool {
        self.compressed
    }

    pub(crate) fn set_compressed(&mut self, compressed: bool) {
        self.compressed = compressed;
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        &mut self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Interleaved `[re, im]` per bin, one row per frame.
    pub fn to_rows(&self) -> Vec<f64> {
        self.data.iter().flat_map(|c| [c.re, c.im]).collect()
    }

    pub fn from_rows(bins: usize, rows: &[f64], compressed: bool) -> Result<Self> {
        if rows.len() % (2 * bins) != 0 {
            return Err(Error::DimensionMismatch { expected: 2 * bins, found: rows.len() % (2 * bins) });
        }
        let data = rows.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Self::new(bins, rows.len() / (2 * bins), data, compressed)
    }
}

/// Short-time Fourier transform with a periodic Hann window and
/// least-squares overlap-add synthesis.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.window_len as f64;
        let window = (0..cfg.window_len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos()).collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            window,
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        })
    }

    pub fn config(&self) -> StftConfig {
        self.cfg
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn stft(&self, w: &Waveform) -> Result<SpectralGrid> {
        self.analyze(w.samples())
    }

    pub fn analyze(&self, x: &[f64]) -> Result<SpectralGrid> {
        let StftConfig { window_len, hop, fft_size } = self.cfg;
        if x.len() < window_len {
            return Err(Error::TooShort { needed: window_len, got: x.len() });
        }
        let frames = self.cfg.frames(x.len());
        let bins = self.cfg.bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
        for t in 0..frames {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (n, (c, w)) in buf.iter_mut().zip(&self.window).enumerate() {
                c.re = x[t * hop + n] * w;
            }
            self.forward.process(&mut buf);
            data.extend_from_slice(&buf[..bins]);
        }
        SpectralGrid::new(bins, frames, data, false)
    }

    fn normalizer(&self, frames: usize) -> Vec<f64> {
        let len = self.cfg.synthesis_len(frames);
        let mut norm = vec![0.0; len];
        for t in 0..frames {
            for (n, w) in self.window.iter().enumerate() {
                norm[t * self.cfg.hop + n] += w * w;
            }
        }
        norm
    }

    /// Reciprocal window normalizer. Zero-normalizer samples are allowed only
    /// in the partially covered edge regions, where they map to zero.
    fn inverse_normalizer(&self, frames: usize) -> Result<Vec<f64>> {
        let norm = self.normalizer(frames);
        let edge = self.cfg.window_len - self.cfg.hop;
        let len = norm.len();
        norm.iter()
            .enumerate()
            .map(|(n, &v)| {
                if v > NORMALIZER_EPS {
                    Ok(1.0 / v)
                } else if n < edge || n + edge >= len {
                    Ok(0.0)
                } else {
                    Err(Error::ZeroNormalizer(n))
                }
            })
            .collect()
    }

    fn check_geometry(&self, g: &SpectralGrid) -> Result<()> {
        if g.bins() != self.cfg.bins() {
            return Err(Error::DimensionMismatch { expected: self.cfg.bins(), found: g.bins() });
        }
        if g.is_compressed() {
            return Err(Error::InvalidConfig("istft expects a decompressed grid".into()));
        }
        Ok(())
    }

    /// One frame of the real inverse DFT; imaginary parts of the DC and
    /// Nyquist bins do not contribute.
    fn inverse_frame(&self, frame: &[Complex64], buf: &mut [Complex64]) {
        let n = self.cfg.fft_size;
        let bins = frame.len();
        buf[..bins].copy_from_slice(frame);
        for k in bins..n {
            buf[k] = frame[n - k].conj();
        }
        self.inverse.process(buf);
    }

    pub fn istft(&self, g: &SpectralGrid) -> Result<Waveform> {
        Waveform::from_samples(self.synthesize(g)?)
    }

    pub fn synthesize(&self, g: &SpectralGrid) -> Result<Vec<f64>> {
        self.check_geometry(g)?;
        let StftConfig { hop, fft_size, .. } = self.cfg;
        let inv_norm = self.inverse_normalizer(g.frames())?;
        let mut out = vec![0.0; inv_norm.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
        let scale = 1.0 / fft_size as f64;
        for t in 0..g.frames() {
            self.inverse_frame(g.frame(t), &mut buf);
            for (n, w) in self.window.iter().enumerate() {
                out[t * hop + n] += w * buf[n].re * scale;
            }
        }
        out.iter_mut().zip(&inv_norm).for_each(|(o, s)| *o *= s);
        Ok(out)
    }

    /// Adjoint of [`Stft::synthesize`]: maps a gradient over output samples to
    /// the gradient over the grid, packed as `re = d/dRe`, `im = d/dIm`.
    pub fn synthesize_adjoint(&self, frames: usize, grad: &[f64]) -> Result<SpectralGrid> {
        let StftConfig { hop, fft_size, .. } = self.cfg;
        let inv_norm = self.inverse_normalizer(frames)?;
        if grad.len() != inv_norm.len() {
            return Err(Error::DimensionMismatch { expected: inv_norm.len(), found: grad.len() });
        }
        let bins = self.cfg.bins();
        let scaled: Vec<f64> = grad.iter().zip(&inv_norm).map(|(g, s)| g * s).collect();
        let mut data = Vec::with_capacity(bins * frames);
        let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
        let n = fft_size as f64;
        for t in 0..frames {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (i, (c, w)) in buf.iter_mut().zip(&self.window).enumerate() {
                c.re = w * scaled[t * hop + i];
            }
            self.forward.process(&mut buf);
            for (k, c) in buf[..bins].iter().enumerate() {
                let paired = k != 0 && !(fft_size % 2 == 0 && k == fft_size / 2);
                let weight = if paired { 2.0 / n } else { 1.0 / n };
                let im = if paired { c.im * weight } else { 0.0 };
                data.push(Complex64::new(c.re * weight, im));
            }
        }
        SpectralGrid::new(bins, frames, data, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn interior_rel_err(a: &[f64], b: &[f64], trim: usize) -> f64 {
        let r = trim..a.len().min(b.len()) - trim;
        let num: f64 = r.clone().map(|i| (a[i] - b[i]).powi(2)).sum();
        let den: f64 = r.map(|i| b[i].powi(2)).sum();
        (num / den).sqrt()
    }

    #[test]
    fn geometry() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.bins(), 256);
        assert_eq!(cfg.frames(16384), (16384 - 510) / 128 + 1);
        assert!(Stft::new(StftConfig { window_len: 100, hop: 101, fft_size: 100 }).is_err());
        assert!(Stft::new(StftConfig { window_len: 100, hop: 10, fft_size: 64 }).is_err());
        let s = Stft::new(cfg).unwrap();
        assert!(matches!(s.analyze(&[0.0; 100]), Err(Error::TooShort { .. })));
    }

    #[test]
    fn zero_in_zero_out() {
        let s = Stft::new(StftConfig::default()).unwrap();
        let g = s.analyze(&vec![0.0; 2048]).unwrap();
        assert!(g.data().iter().all(|c| c.norm() == 0.0));
        let w = s.synthesize(&SpectralGrid::zeros(256, 10)).unwrap();
        assert!(w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn round_trip_white_noise() {
        let s = Stft::new(StftConfig::default()).unwrap();
        let x = noise(16384, 1);
        let y = s.synthesize(&s.analyze(&x).unwrap()).unwrap();
        assert!(interior_rel_err(&y, &x, 510) < 1e-6);
    }

    #[test]
    fn round_trip_with_padded_fft() {
        let s = Stft::new(StftConfig { fft_size: 512, ..StftConfig::default() }).unwrap();
        let x = noise(4096, 2);
        let g = s.analyze(&x).unwrap();
        assert_eq!(g.bins(), 257);
        let y = s.synthesize(&g).unwrap();
        assert!(interior_rel_err(&y, &x, 510) < 1e-6);
    }

    #[test]
    fn bin_centred_sine_is_concentrated() {
        let s = Stft::new(StftConfig::default()).unwrap();
        let k0 = 40.0;
        let x: Vec<f64> = (0..4096).map(|n| (2.0 * PI * k0 * n as f64 / 510.0).sin()).collect();
        let g = s.analyze(&x).unwrap();
        for t in 0..g.frames() {
            let e: Vec<f64> = g.frame(t).iter().map(|c| c.norm_sqr()).collect();
            let total: f64 = e.iter().sum();
            let near: f64 = e[39..=41].iter().sum();
            assert!(near / total >= 0.99);
        }
    }

    #[test]
    fn windowed_parseval() {
        // sum_k c_k |X_k|^2 / N equals the energy of the windowed frame, with
        // c_k = 2 for bins that have a mirrored partner.
        let s = Stft::new(StftConfig::default()).unwrap();
        let x = noise(2000, 3);
        let g = s.analyze(&x).unwrap();
        for t in 0..g.frames() {
            let time: f64 = s.window().iter().enumerate().map(|(n, w)| (x[t * 128 + n] * w).powi(2)).sum();
            let freq: f64 = g
                .frame(t)
                .iter()
                .enumerate()
                .map(|(k, c)| if k == 0 || k == 255 { c.norm_sqr() } else { 2.0 * c.norm_sqr() })
                .sum::<f64>()
                / 510.0;
            assert!((freq - time).abs() <= 1e-6 * time);
        }
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let s = Stft::new(StftConfig { window_len: 64, hop: 16, fft_size: 64 }).unwrap();
        let frames = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid_rows: Vec<f64> = (0..frames * 33 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grid = SpectralGrid::from_rows(33, &grid_rows, false).unwrap();
        let probe = noise(s.config().synthesis_len(frames), 4);
        let loss = |rows: &[f64]| -> f64 {
            let g = SpectralGrid::from_rows(33, rows, false).unwrap();
            s.synthesize(&g).unwrap().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let adj = s.synthesize_adjoint(frames, &probe).unwrap().to_rows();
        let h = 1e-5;
        for i in (0..grid_rows.len()).step_by(7) {
            let mut up = grid.to_rows();
            let mut dn = grid.to_rows();
            up[i] += h;
            dn[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - adj[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", adj[i]);
        }
    }
}

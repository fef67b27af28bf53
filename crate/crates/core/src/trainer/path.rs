//! Maps between waveforms and the rows the generator operates on.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::{Compression, SpectralGrid, Stft, StftConfig};

/// A differentiable synthesis path. `analyze` turns a waveform into
/// generator rows of width `row_dim`; `synthesize` maps rows back to a
/// waveform of the original length.
pub trait SignalPath: Send + Sync {
    fn row_dim(&self) -> usize;

    /// Flattened rows, `row_dim` values per row.
    fn analyze(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn synthesize(&self, rows: &[f64], len: usize) -> Result<Vec<f64>>;

    /// Gradient with respect to `rows` of `<grad, synthesize(rows, len)>`.
    fn synthesize_vjp(&self, rows: &[f64], len: usize, grad: &[f64]) -> Result<Vec<f64>>;
}

/// Rows are consecutive chunks of the waveform.
#[derive(Debug, Clone, Copy)]
pub struct IdentityPath {
    dim: usize,
}

impl IdentityPath {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("row width must be positive".into()));
        }
        Ok(Self { dim })
    }

    fn check(&self, len: usize) -> Result<()> {
        if len == 0 || len % self.dim != 0 {
            return Err(Error::DimensionMismatch { expected: self.dim, found: len % self.dim });
        }
        Ok(())
    }
}

impl SignalPath for IdentityPath {
    fn row_dim(&self) -> usize {
        self.dim
    }

    fn analyze(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(x.to_vec())
    }

    fn synthesize(&self, rows: &[f64], len: usize) -> Result<Vec<f64>> {
        self.check(len)?;
        if rows.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: rows.len() });
        }
        Ok(rows.to_vec())
    }

    fn synthesize_vjp(&self, rows: &[f64], len: usize, grad: &[f64]) -> Result<Vec<f64>> {
        if rows.len() != len || grad.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: grad.len() });
        }
        Ok(grad.to_vec())
    }
}

/// Compressed STFT frames, `[re, im]` interleaved per bin.
///
/// The waveform is padded with one window of zeros on each side, so every
/// original sample sits where the overlap-add normalizer is well away from
/// zero; synthesis trims the padding again.
#[derive(Debug)]
pub struct SpectralPath {
    stft: Stft,
    compression: Compression,
}

impl SpectralPath {
    pub fn new(cfg: StftConfig, compression: Compression) -> Result<Self> {
        Ok(Self { stft: Stft::new(cfg)?, compression })
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn compression(&self) -> Compression {
        self.compression
    }

    fn pad(&self) -> usize {
        self.stft.config().window_len
    }

    pub fn frames_for(&self, len: usize) -> usize {
        self.stft.config().frames(len + 2 * self.pad())
    }

    fn grid(&self, rows: &[f64], len: usize) -> Result<SpectralGrid> {
        let grid = SpectralGrid::from_rows(self.stft.config().bins(), rows, true)?;
        let want = self.frames_for(len);
        if grid.frames() != want {
            return Err(Error::DimensionMismatch { expected: want, found: grid.frames() });
        }
        Ok(grid)
    }
}

impl SignalPath for SpectralPath {
    fn row_dim(&self) -> usize {
        2 * self.stft.config().bins()
    }

    fn analyze(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.pad();
        let mut padded = vec![0.0; x.len() + 2 * pad];
        padded[pad..pad + x.len()].copy_from_slice(x);
        let spec = self.stft.analyze(&padded)?;
        Ok(self.compression.compress(&spec)?.to_rows())
    }

    fn synthesize(&self, rows: &[f64], len: usize) -> Result<Vec<f64>> {
        let grid = self.compression.decompress(&self.grid(rows, len)?)?;
        let full = self.stft.synthesize(&grid)?;
        let pad = self.pad();
        Ok(full[pad..pad + len].to_vec())
    }

    fn synthesize_vjp(&self, rows: &[f64], len: usize, grad: &[f64]) -> Result<Vec<f64>> {
        if grad.len() != len {
            return Err(Error::DimensionMismatch { expected: len, found: grad.len() });
        }
        let grid = self.grid(rows, len)?;
        let frames = grid.frames();
        let pad = self.pad();
        let mut full = vec![0.0; self.stft.config().synthesis_len(frames)];
        full[pad..pad + len].copy_from_slice(grad);
        let upstream = self.stft.synthesize_adjoint(frames, &full)?;
        let out = grid
            .data()
            .iter()
            .zip(upstream.data())
            .flat_map(|(&x, &u)| {
                let g: Complex64 = self.compression.decompress_vjp(x, u);
                [g.re, g.im]
            })
            .collect();
        Ok(out)
    }
}

use rustfft::num_complex::Complex64;

use super::SpectralGrid;
use crate::error::{Error, Result};

/// Magnitude compression `c * |X|^a * exp(i arg X)`; phase is untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compression {
    pub exponent: f64,
    pub factor: f64,
}

impl Default for Compression {
    fn default() -> Self {
        Self { exponent: 0.5, factor: 0.15 }
    }
}

impl Compression {
    pub fn new(exponent: f64, factor: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite() && factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "compression needs positive exponent and factor, got a={exponent}, c={factor}"
            )));
        }
        Ok(Self { exponent, factor })
    }

    pub fn compress_value(&self, x: Complex64) -> Complex64 {
        let r = x.norm();
        if r == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        x * (self.factor * r.powf(self.exponent - 1.0))
    }

    pub fn decompress_value(&self, x: Complex64) -> Complex64 {
        let r = x.norm();
        if r == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let p = 1.0 / self.exponent;
        x * ((r / self.factor).powf(p) / r)
    }

    /// Vector-Jacobian product of [`Compression::decompress_value`] at the
    /// compressed value `x`, treating re/im as independent reals.
    pub fn decompress_vjp(&self, x: Complex64, upstream: Complex64) -> Complex64 {
        let p = 1.0 / self.exponent;
        let r = x.norm();
        let cp = self.factor.powf(-p);
        if r == 0.0 {
            // The map is r^(p-1) x: smooth with zero slope for p > 1, linear
            // for p = 1, and singular (reported as zero) for p < 1.
            return if (p - 1.0).abs() < 1e-15 { upstream * cp } else { Complex64::new(0.0, 0.0) };
        }
        let a = cp * r.powf(p - 1.0);
        let b = cp * (p - 1.0) * r.powf(p - 3.0);
        let proj = x.re * upstream.re + x.im * upstream.im;
        Complex64::new(a * upstream.re + b * proj * x.re, a * upstream.im + b * proj * x.im)
    }

    pub fn compress(&self, g: &SpectralGrid) -> Result<SpectralGrid> {
        if g.is_compressed() {
            return Err(Error::InvalidConfig("grid is already compressed".into()));
        }
        let mut out = g.clone();
        out.data_mut().iter_mut().for_each(|c| *c = self.compress_value(*c));
        out.set_compressed(true);
        Ok(out)
    }

    pub fn decompress(&self, g: &SpectralGrid) -> Result<SpectralGrid> {
        if !g.is_compressed() {
            return Err(Error::InvalidConfig("grid is not compressed".into()));
        }
        let mut out = g.clone();
        out.data_mut().iter_mut().for_each(|c| *c = self.decompress_value(*c));
        out.set_compressed(false);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn fixed_points() {
        let c = Compression::default();
        assert_eq!(c.compress_value(Complex64::new(0.0, 0.0)), Complex64::new(0.0, 0.0));
        let x = Complex64::from_polar(1.0, PI / 3.0);
        let y = c.compress_value(x);
        assert!((y.norm() - 0.15).abs() < 1e-15);
        assert!((y.arg() - PI / 3.0).abs() < 1e-14);
        assert!(Compression::new(0.0, 0.15).is_err());
    }

    #[test]
    fn grid_round_trip() {
        let c = Compression::default();
        let data: Vec<Complex64> = (0..64).map(|i| Complex64::new((i as f64 * 0.37).sin() * 3.0, (i as f64 * 1.1).cos())).collect();
        let g = SpectralGrid::new(8, 8, data, false).unwrap();
        let back = c.decompress(&c.compress(&g).unwrap()).unwrap();
        for (a, b) in back.data().iter().zip(g.data()) {
            assert!((a - b).norm() <= 1e-12 * (1.0 + b.norm()));
        }
        assert!(c.decompress(&g).is_err());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        for c in [Compression::default(), Compression::new(0.3, 0.5).unwrap(), Compression::new(1.0, 2.0).unwrap()] {
            let x = Complex64::new(0.31, -0.12);
            let up = Complex64::new(0.7, 1.3);
            let f = |z: Complex64| {
                let y = c.decompress_value(z);
                y.re * up.re + y.im * up.im
            };
            let h = 1e-6;
            let fd = Complex64::new(
                (f(x + Complex64::new(h, 0.0)) - f(x - Complex64::new(h, 0.0))) / (2.0 * h),
                (f(x + Complex64::new(0.0, h)) - f(x - Complex64::new(0.0, h))) / (2.0 * h),
            );
            let an = c.decompress_vjp(x, up);
            assert!((fd - an).norm() < 1e-7 * (1.0 + fd.norm()), "{fd} vs {an}");
        }
        let c = Compression::default();
        assert_eq!(c.decompress_vjp(Complex64::new(0.0, 0.0), Complex64::new(1.0, 1.0)), Complex64::new(0.0, 0.0));
    }
}

//! The one-step generator.
//!
//! A fully connected stack maps one row per sample. In the direct paradigm
//! the row is the (noise-injected) observation `y + sigma * eps` and an
//! optional skip connection adds the input back to the output. In the
//! conditional paradigm the first layer sees `[eps | y]` and the condition
//! `y` is concatenated again to the input of every later layer.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Paradigm {
    /// `x = f(y + sigma * eps)`
    DirectMapping,
    /// `x = f(eps, y)`
    Conditional,
}

impl std::str::FromStr for Paradigm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" | "direct_mapping" | "direct-mapping" => Ok(Self::DirectMapping),
            "conditional" => Ok(Self::Conditional),
            _ => Err(Error::InvalidConfig(format!("unknown paradigm `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Silu,
    /// No nonlinearity; the whole stack is affine.
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::Silu => x / (1.0 + (-x).exp()),
            Self::Linear => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Self::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s + x * s * (1.0 - s)
            }
            Self::Linear => 1.0,
        }
    }

    fn code(self) -> u32 {
        match self {
            Self::Tanh => 0,
            Self::Silu => 1,
            Self::Linear => 2,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Self::Tanh),
            1 => Ok(Self::Silu),
            2 => Ok(Self::Linear),
            _ => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "silu" => Ok(Self::Silu),
            "linear" => Ok(Self::Linear),
            _ => Err(Error::InvalidConfig(format!("unknown activation `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub paradigm: Paradigm,
    /// Width of the observation and of the output.
    pub data_dim: usize,
    /// Width of `eps` in the conditional paradigm (ignored otherwise).
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Direct paradigm only: output = input + stack(input).
    pub skip: bool,
    /// Start the last layer at zero so the initial map is the skip (or zero).
    pub zero_final: bool,
}

impl GeneratorConfig {
    pub fn direct(data_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            paradigm: Paradigm::DirectMapping,
            data_dim,
            noise_dim: 0,
            hidden,
            activation: Activation::Silu,
            skip: true,
            zero_final: true,
        }
    }

    /// The final layer starts random here. Without a skip, a zero final layer
    /// emits all-zero compressed spectra, and decompression has a vanishing
    /// derivative at zero magnitude, so training would never leave that point.
    pub fn conditional(data_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            paradigm: Paradigm::Conditional,
            data_dim,
            noise_dim: data_dim,
            hidden,
            activation: Activation::Silu,
            skip: false,
            zero_final: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("generator widths must be positive".into()));
        }
        if self.paradigm == Paradigm::Conditional && (self.noise_dim == 0 || self.skip) {
            return Err(Error::InvalidConfig("conditional generator needs noise_dim > 0 and no skip".into()));
        }
        Ok(())
    }

    fn cond_width(&self) -> usize {
        match self.paradigm {
            Paradigm::DirectMapping => 0,
            Paradigm::Conditional => self.data_dim,
        }
    }

    /// `(out, in)` of every layer.
    fn shapes(&self) -> Vec<(usize, usize)> {
        let first_in = match self.paradigm {
            Paradigm::DirectMapping => self.data_dim,
            Paradigm::Conditional => self.noise_dim + self.data_dim,
        };
        let mut shapes = Vec::new();
        let mut fan_in = first_in;
        for &h in &self.hidden {
            shapes.push((h, fan_in));
            fan_in = h + self.cond_width();
        }
        shapes.push((self.data_dim, fan_in));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    config: GeneratorConfig,
    layers: Vec<Dense>,
}

/// Intermediate values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer (after condition concatenation).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Dense>,
}

impl ParamGrads {
    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|d| d.weight.iter().chain(d.bias.iter()).all(|&v| v == 0.0))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|d| d.weight.iter().chain(d.bias.iter()).copied()).collect()
    }
}

impl GeneratorParams {
    pub fn new<R: Rng>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .into_iter()
            .enumerate()
            .map(|(i, (out, inp))| {
                let weight = if i == last && config.zero_final {
                    Array2::zeros((out, inp))
                } else {
                    let normal = Normal::new(0.0, (1.0 / inp as f64).sqrt()).unwrap();
                    Array2::from_shape_fn((out, inp), |_| normal.sample(rng))
                };
                Dense { weight, bias: Array1::zeros(out) }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn paradigm(&self) -> Paradigm {
        self.config.paradigm
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|d| d.weight.len() + d.bias.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|d| d.weight.iter().chain(d.bias.iter()).copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|d| d.weight.iter().chain(d.bias.iter()).all(|v| v.is_finite()))
    }

    fn expect(&self, paradigm: Paradigm) -> Result<()> {
        if self.config.paradigm == paradigm {
            Ok(())
        } else {
            Err(Error::ParadigmMismatch {
                expected: match paradigm {
                    Paradigm::DirectMapping => "direct-mapping",
                    Paradigm::Conditional => "conditional",
                },
            })
        }
    }

    fn run(&self, first: Array2<f64>, cond: Option<ArrayView2<f64>>) -> (Array2<f64>, Tape) {
        let act = self.config.activation;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = first;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                if let Some(c) = cond {
                    h = concatenate![Axis(1), h, c];
                }
            }
            let z = h.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(h);
            if i == last {
                // `dot` may hand back column-major output for column-major inputs.
                h = z.as_standard_layout().into_owned();
            } else {
                h = z.mapv(|v| act.apply(v));
                pre.push(z);
            }
        }
        (h, Tape { inputs, pre })
    }

    fn check_rows(m: &ArrayView2<f64>, cols: usize) -> Result<()> {
        if m.ncols() != cols {
            return Err(Error::DimensionMismatch { expected: cols, found: m.ncols() });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generator input"));
        }
        Ok(())
    }

    /// Batched direct map; `sigma[i]` scales the noise of row `i`.
    pub fn forward_direct_batch(&self, noisy: ArrayView2<f64>, sigma: &[f64], eps: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.expect(Paradigm::DirectMapping)?;
        Self::check_rows(&noisy, self.config.data_dim)?;
        if eps.dim() != noisy.dim() {
            return Err(Error::DimensionMismatch { expected: noisy.len(), found: eps.len() });
        }
        if sigma.len() != noisy.nrows() {
            return Err(Error::DimensionMismatch { expected: noisy.nrows(), found: sigma.len() });
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidConfig("sigma must be finite and non-negative".into()));
        }
        let mut x = noisy.to_owned();
        for ((mut row, e), &sg) in x.axis_iter_mut(Axis(0)).zip(eps.axis_iter(Axis(0))).zip(sigma) {
            if sg != 0.0 {
                row.zip_mut_with(&e, |a, b| *a += sg * b);
            }
        }
        let (mut out, tape) = self.run(x, None);
        if self.config.skip {
            out += &tape.inputs[0];
        }
        Ok((out, tape))
    }

    pub fn forward_direct(&self, noisy: &[f64], sigma: f64, eps: &[f64]) -> Result<Vec<f64>> {
        let n = ArrayView2::from_shape((1, noisy.len()), noisy).unwrap();
        let e = ArrayView2::from_shape((1, eps.len()), eps).unwrap();
        Ok(self.forward_direct_batch(n, &[sigma], e)?.0.into_raw_vec_and_offset().0)
    }

    pub fn forward_conditional_batch(&self, eps: ArrayView2<f64>, condition: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.expect(Paradigm::Conditional)?;
        Self::check_rows(&eps, self.config.noise_dim)?;
        Self::check_rows(&condition, self.config.data_dim)?;
        if eps.nrows() != condition.nrows() {
            return Err(Error::DimensionMismatch { expected: condition.nrows(), found: eps.nrows() });
        }
        let first = concatenate![Axis(1), eps, condition];
        Ok(self.run(first, Some(condition)))
    }

    pub fn forward_conditional(&self, eps: &[f64], condition: &[f64]) -> Result<Vec<f64>> {
        let e = ArrayView2::from_shape((1, eps.len()), eps).unwrap();
        let c = ArrayView2::from_shape((1, condition.len()), condition).unwrap();
        Ok(self.forward_conditional_batch(e, c)?.0.into_raw_vec_and_offset().0)
    }

    /// Reverse pass for `sum <cotangent, output>`.
    pub fn backward(&self, tape: &Tape, cotangent: ArrayView2<f64>) -> Result<ParamGrads> {
        let rows = tape.inputs[0].nrows();
        if cotangent.dim() != (rows, self.config.data_dim) {
            return Err(Error::DimensionMismatch { expected: rows * self.config.data_dim, found: cotangent.len() });
        }
        let act = self.config.activation;
        let cond = self.config.cond_width();
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut dz = cotangent.to_owned();
        for i in (0..self.layers.len()).rev() {
            let input = &tape.inputs[i];
            grads.push(Dense { weight: dz.t().dot(input), bias: dz.sum_axis(Axis(0)) });
            if i == 0 {
                break;
            }
            let dh_full = dz.dot(&self.layers[i].weight);
            let width = dh_full.ncols() - cond;
            let mut dh = dh_full.slice(s![.., ..width]).to_owned();
            dh.zip_mut_with(&tape.pre[i - 1], |g, &p| *g *= act.derivative(p));
            dz = dh;
        }
        grads.reverse();
        Ok(ParamGrads { layers: grads })
    }

    const MAGIC: &'static [u8; 8] = b"DRGEN\0\0\x01";

    /// Little-endian checkpoint: magic, `u32` header fields, per-layer
    /// `(out, in)` shapes, then every weight (row-major) and bias as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(Self::MAGIC);
        let paradigm = match c.paradigm {
            Paradigm::DirectMapping => 0u32,
            Paradigm::Conditional => 1,
        };
        for v in [paradigm, c.activation.code(), c.skip as u32, c.data_dim as u32, c.noise_dim as u32, self.layers.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for d in &self.layers {
            out.extend_from_slice(&(d.weight.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(d.weight.ncols() as u32).to_le_bytes());
        }
        for v in self.flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(Error::Format("truncated generator checkpoint".into()));
            }
            let (head, rest) = cursor.split_at(n);
            cursor = rest;
            Ok(head)
        };
        if take(8)? != Self::MAGIC {
            return Err(Error::Format("not a generator checkpoint".into()));
        }
        let mut u32s = |n: usize| -> Result<Vec<u32>> {
            (0..n).map(|_| Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()))).collect()
        };
        let h = u32s(6)?;
        let shapes: Vec<(usize, usize)> = u32s(2 * h[5] as usize)?.chunks(2).map(|c| (c[0] as usize, c[1] as usize)).collect();
        let paradigm = match h[0] {
            0 => Paradigm::DirectMapping,
            1 => Paradigm::Conditional,
            p => return Err(Error::Format(format!("unknown paradigm code {p}"))),
        };
        let hidden = shapes[..shapes.len().saturating_sub(1)].iter().map(|s| s.0).collect();
        let config = GeneratorConfig {
            paradigm,
            activation: Activation::from_code(h[1])?,
            skip: h[2] != 0,
            data_dim: h[3] as usize,
            noise_dim: h[4] as usize,
            hidden,
            zero_final: false,
        };
        config.validate()?;
        if config.shapes() != shapes {
            return Err(Error::Format("layer shapes do not match the header".into()));
        }
        let mut floats = |n: usize| -> Result<Vec<f64>> {
            (0..n).map(|_| Ok(f64::from_le_bytes(take(8)?.try_into().unwrap()))).collect()
        };
        let mut layers = Vec::new();
        for &(o, i) in &shapes {
            let weight = Array2::from_shape_vec((o, i), floats(o * i)?).unwrap();
            let bias = Array1::from_vec(floats(o)?);
            layers.push(Dense { weight, bias });
        }
        if !cursor.is_empty() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { config, layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// A generator that remembers its last recorded forward pass so that
/// `backward` can be requested separately.
#[derive(Debug, Clone)]
pub struct Generator {
    pub params: GeneratorParams,
    tape: Option<Tape>,
}

impl Generator {
    pub fn new(params: GeneratorParams) -> Self {
        Self { params, tape: None }
    }

    pub fn forward_direct_batch(&mut self, noisy: ArrayView2<f64>, sigma: &[f64], eps: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (out, tape) = self.params.forward_direct_batch(noisy, sigma, eps)?;
        self.tape = Some(tape);
        Ok(out)
    }

    pub fn forward_conditional_batch(&mut self, eps: ArrayView2<f64>, condition: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (out, tape) = self.params.forward_conditional_batch(eps, condition)?;
        self.tape = Some(tape);
        Ok(out)
    }

    /// Consumes the recorded forward pass.
    pub fn backward(&mut self, cotangent: ArrayView2<f64>) -> Result<ParamGrads> {
        let tape = self.tape.take().ok_or(Error::BackwardWithoutForward)?;
        self.params.backward(&tape, cotangent)
    }
}

/// `log sigma ~ N(mu, sigma_log^2)`, truncated to `[lo, hi]` by rejection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub mu: f64,
    pub sigma_log: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { mu: -3.0, sigma_log: 1.2, lo: 0.01, hi: 0.3 }
    }
}

pub const MAX_SIGMA_PROPOSALS: usize = 100_000;

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.sigma_log >= 0.0 && self.mu.is_finite() && self.hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid noise schedule {self:?}")));
        }
        Ok(())
    }

    /// One proposal `exp(mu + sigma_log * z)`.
    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.mu + self.sigma_log * z).exp()
    }

    pub fn accepts(&self, sigma: f64) -> bool {
        (self.lo..=self.hi).contains(&sigma)
    }
}

pub fn sample_sigma<R: Rng + ?Sized>(schedule: &NoiseSchedule, rng: &mut R) -> Result<f64> {
    schedule.validate()?;
    for _ in 0..MAX_SIGMA_PROPOSALS {
        let s = schedule.propose(rng);
        if schedule.accepts(s) {
            return Ok(s);
        }
    }
    Err(Error::SamplerExhausted(MAX_SIGMA_PROPOSALS))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn randomized(mut cfg: GeneratorConfig, seed: u64) -> GeneratorParams {
        cfg.zero_final = false;
        let mut p = GeneratorParams::new(cfg, &mut rng(seed)).unwrap();
        let mut r = rng(seed + 1000);
        for d in p.layers_mut() {
            d.bias.mapv_inplace(|_| r.gen_range(-0.3..0.3));
        }
        p
    }

    /// Straight-line evaluation with explicit loops.
    fn reference_eval(p: &GeneratorParams, first: &[f64], cond: &[f64]) -> Vec<f64> {
        let act = p.config().activation;
        let n = p.layers().len();
        let mut h = first.to_vec();
        for (i, d) in p.layers().iter().enumerate() {
            if i > 0 {
                h.extend_from_slice(cond);
            }
            let mut z = vec![0.0; d.weight.nrows()];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut acc = d.bias[o];
                for (k, hk) in h.iter().enumerate() {
                    acc += d.weight[[o, k]] * hk;
                }
                *zo = if i + 1 == n { acc } else { act.apply(acc) };
            }
            h = z;
        }
        h
    }

    #[test]
    fn zero_sigma_ignores_eps() {
        let p = randomized(GeneratorConfig::direct(6, vec![8, 8]), 1);
        let y = [0.1, -0.2, 0.3, 0.0, 0.5, -0.4];
        let a = p.forward_direct(&y, 0.0, &[1.0; 6]).unwrap();
        let b = p.forward_direct(&y, 0.0, &[-7.0; 6]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_final_layer() {
        let cfg = GeneratorConfig { skip: false, ..GeneratorConfig::direct(4, vec![8]) };
        let p = GeneratorParams::new(cfg, &mut rng(2)).unwrap();
        assert_eq!(p.forward_direct(&[1.0, 2.0, 3.0, 4.0], 0.0, &[0.0; 4]).unwrap(), vec![0.0; 4]);
        let skip = GeneratorParams::new(GeneratorConfig::direct(4, vec![8]), &mut rng(2)).unwrap();
        assert_eq!(skip.forward_direct(&[1.0, 2.0, 3.0, 4.0], 0.0, &[0.0; 4]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn direct_matches_reference() {
        let p = randomized(GeneratorConfig::direct(5, vec![7, 6]), 3);
        let y = [0.3, -0.1, 0.8, 0.2, -0.5];
        let e = [0.5, 1.0, -1.0, 0.3, 0.1];
        let x: Vec<f64> = y.iter().zip(&e).map(|(a, b)| a + 0.05 * b).collect();
        let got = p.forward_direct(&y, 0.05, &e).unwrap();
        let want: Vec<f64> = reference_eval(&p, &x, &[]).iter().zip(&x).map(|(a, b)| a + b).collect();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-13);
        }
    }

    #[test]
    fn conditional_matches_reference_and_varies_with_eps() {
        let p = randomized(GeneratorConfig::conditional(4, vec![6, 5]), 4);
        let c = [0.2, -0.3, 0.4, 0.1];
        let e1 = [1.0, 0.0, -1.0, 0.5];
        let e2 = [0.0, 1.0, 0.5, -0.5];
        let got = p.forward_conditional(&e1, &c).unwrap();
        let mut first = e1.to_vec();
        first.extend_from_slice(&c);
        let want = reference_eval(&p, &first, &c);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-13);
        }
        assert_eq!(got, p.forward_conditional(&e1, &c).unwrap());
        assert_ne!(got, p.forward_conditional(&e2, &c).unwrap());
    }

    #[test]
    fn paradigm_and_shape_errors() {
        let d = randomized(GeneratorConfig::direct(3, vec![4]), 5);
        assert!(matches!(d.forward_conditional(&[0.0; 3], &[0.0; 3]), Err(Error::ParadigmMismatch { .. })));
        assert!(matches!(d.forward_direct(&[0.0; 2], 0.0, &[0.0; 2]), Err(Error::DimensionMismatch { .. })));
        let c = randomized(GeneratorConfig::conditional(3, vec![4]), 5);
        assert!(matches!(c.forward_direct(&[0.0; 3], 0.0, &[0.0; 3]), Err(Error::ParadigmMismatch { .. })));
        let mut g = Generator::new(d);
        assert!(matches!(g.backward(ndarray::Array2::zeros((1, 3)).view()), Err(Error::BackwardWithoutForward)));
    }

    #[test]
    fn zero_cotangent_zero_gradient() {
        let mut g = Generator::new(randomized(GeneratorConfig::direct(3, vec![4, 4]), 6));
        let y = standard_normal(&mut rng(7), 5, 3);
        g.forward_direct_batch(y.view(), &[0.0; 5], Array2::zeros((5, 3)).view()).unwrap();
        assert!(g.backward(Array2::zeros((5, 3)).view()).unwrap().is_zero());
    }

    #[test]
    fn linear_least_squares_gradient() {
        // No hidden layers: out = W x + b, loss = 0.5 ||out - t||^2.
        let cfg = GeneratorConfig { activation: Activation::Linear, skip: false, ..GeneratorConfig::direct(3, vec![]) };
        let p = randomized(cfg, 8);
        let x = standard_normal(&mut rng(9), 4, 3);
        let t = standard_normal(&mut rng(10), 4, 3);
        let (out, tape) = p.forward_direct_batch(x.view(), &[0.0; 4], Array2::zeros((4, 3)).view()).unwrap();
        let resid = &out - &t;
        let grads = p.backward(&tape, resid.view()).unwrap();
        let want_w = resid.t().dot(&x);
        let want_b = resid.sum_axis(Axis(0));
        assert!((&grads.layers[0].weight - &want_w).iter().all(|v| v.abs() < 1e-13));
        assert!((&grads.layers[0].bias - &want_b).iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn checkpoint_round_trip() {
        for cfg in [GeneratorConfig::direct(5, vec![4, 3]), GeneratorConfig::conditional(3, vec![6])] {
            let p = randomized(cfg, 11);
            let bytes = p.to_bytes();
            let mut q = GeneratorParams::from_bytes(&bytes).unwrap();
            q.config.zero_final = p.config.zero_final;
            assert_eq!(p, q);
            assert!(GeneratorParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
            let mut extra = bytes.clone();
            extra.push(0);
            assert!(GeneratorParams::from_bytes(&extra).is_err());
        }
        assert!(GeneratorParams::from_bytes(b"nonsense").is_err());
    }

    #[test]
    fn degenerate_sigma_schedule() {
        let s = NoiseSchedule { sigma_log: 0.0, ..NoiseSchedule::default() };
        let mut r = rng(12);
        for _ in 0..10 {
            assert!((sample_sigma(&s, &mut r).unwrap() - (-3.0f64).exp()).abs() < 1e-15);
        }
        let impossible = NoiseSchedule { mu: 10.0, sigma_log: 0.0, ..NoiseSchedule::default() };
        assert!(matches!(sample_sigma(&impossible, &mut r), Err(Error::SamplerExhausted(_))));
        assert!(sample_sigma(&NoiseSchedule { lo: 0.3, hi: 0.01, ..NoiseSchedule::default() }, &mut r).is_err());
    }
}

//! Frozen frame-wise feature extractors.
//!
//! A waveform is cut into rectangular frames (`frame_len` samples every
//! `frame_hop`), each frame runs through a fixed layer stack, and the outputs
//! of the tapped layers are returned as one [`LatentBatch`] per tap. The
//! random stack is `h_l = tanh(W_l h_{l-1} + b_l)` with Gaussian entries of
//! variance `1 / fan_in`, drawn once from the seed.

use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::drift::{LatentBatch, SetRole};
use crate::error::{Error, Result};
use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Latent frame = raw frame samples.
    Identity,
    RandomStack,
}

impl EncoderKind {
    fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::RandomStack => "random_stack",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "random_stack" | "random-stack" => Ok(Self::RandomStack),
            _ => Err(Error::InvalidConfig(format!("unknown encoder kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    /// Output width of every layer. The identity encoder has one layer of
    /// width `frame_len`.
    pub layer_dims: Vec<usize>,
    pub taps: Vec<usize>,
    pub seed: u64,
    pub frame_len: usize,
    pub frame_hop: usize,
}

impl Default for EncoderSpec {
    /// Three 64-wide layers, all tapped, 25 ms frames every 20 ms at 16 kHz.
    fn default() -> Self {
        Self {
            kind: EncoderKind::RandomStack,
            layer_dims: vec![64, 64, 64],
            taps: vec![0, 1, 2],
            seed: 0,
            frame_len: 400,
            frame_hop: 320,
        }
    }
}

impl EncoderSpec {
    pub fn identity(frame_len: usize, frame_hop: usize) -> Self {
        Self {
            kind: EncoderKind::Identity,
            layer_dims: vec![frame_len],
            taps: vec![0],
            seed: 0,
            frame_len,
            frame_hop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.frame_hop == 0 {
            return Err(Error::InvalidConfig("frame length and hop must be positive".into()));
        }
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) {
            return Err(Error::InvalidConfig("every encoder layer needs a positive width".into()));
        }
        if self.kind == EncoderKind::Identity && self.layer_dims != [self.frame_len] {
            return Err(Error::InvalidConfig("identity encoder has a single layer of width frame_len".into()));
        }
        if self.taps.is_empty() {
            return Err(Error::InvalidConfig("at least one layer must be tapped".into()));
        }
        if let Some(bad) = self.taps.iter().find(|&&t| t >= self.layer_dims.len()) {
            return Err(Error::InvalidConfig(format!(
                "tap {bad} is outside the {}-layer stack",
                self.layer_dims.len()
            )));
        }
        if self.taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("taps must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Frame count `floor((len - frame_len) / hop) + 1`; trailing partial
    /// frames are dropped.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.frame_hop + 1
        }
    }

    pub fn tap_dims(&self) -> Vec<usize> {
        self.taps.iter().map(|&t| self.layer_dims[t]).collect()
    }

    fn join(v: &[usize]) -> String {
        v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }

    /// Plain-text `key = value` form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind = {}", self.kind.name());
        let _ = writeln!(s, "layer_dims = {}", Self::join(&self.layer_dims));
        let _ = writeln!(s, "taps = {}", Self::join(&self.taps));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "frame_len = {}", self.frame_len);
        let _ = writeln!(s, "frame_hop = {}", self.frame_hop);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let conf = ini::Ini::load_from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Self::from_properties(conf.general_section())
    }

    /// Reads the keys written by [`EncoderSpec::to_text`]; missing keys keep
    /// their defaults.
    pub fn from_properties(p: &ini::Properties) -> Result<Self> {
        let mut spec = Self::default();
        if let Some(kind) = p.get("kind") {
            spec.kind = kind.parse()?;
        }
        let list = |key: &str| -> Result<Option<Vec<usize>>> {
            p.get(key)
                .map(|v| {
                    v.split(',')
                        .map(|x| x.trim().parse::<usize>().map_err(|e| Error::InvalidConfig(format!("{key}: {e}"))))
                        .collect()
                })
                .transpose()
        };
        let scalar = |key: &str| -> Result<Option<u64>> {
            p.get(key)
                .map(|v| v.trim().parse::<u64>().map_err(|e| Error::InvalidConfig(format!("{key}: {e}"))))
                .transpose()
        };
        if let Some(v) = scalar("frame_len")? {
            spec.frame_len = v as usize;
        }
        if let Some(v) = scalar("frame_hop")? {
            spec.frame_hop = v as usize;
        }
        if let Some(v) = scalar("seed")? {
            spec.seed = v;
        }
        match list("layer_dims")? {
            Some(v) => spec.layer_dims = v,
            None if spec.kind == EncoderKind::Identity => spec.layer_dims = vec![spec.frame_len],
            None => {}
        }
        match list("taps")? {
            Some(v) => spec.taps = v,
            None if spec.kind == EncoderKind::Identity => spec.taps = vec![0],
            None => {}
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Tapped layer outputs for one waveform, `frames` points per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStack {
    frames: usize,
    layers: Vec<LatentBatch>,
}

impl LatentStack {
    pub fn new(layers: Vec<LatentBatch>) -> Result<Self> {
        let frames = layers.first().map(LatentBatch::len).ok_or(Error::EmptyBatch("latent stack"))?;
        if let Some(bad) = layers.iter().find(|l| l.len() != frames) {
            return Err(Error::DimensionMismatch { expected: frames, found: bad.len() });
        }
        Ok(Self { frames, layers })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn layers(&self) -> &[LatentBatch] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LatentBatch {
        &self.layers[i]
    }

    pub fn into_layers(self) -> Vec<LatentBatch> {
        self.layers
    }

    fn same_shape(&self, other: &LatentStack) -> bool {
        self.frames == other.frames
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.dim() == b.dim())
    }
}

struct Layer {
    weight: Array2<f64>,
    bias: Array1<f64>,
}

/// Activations kept for the backward pass.
pub struct EncoderCache {
    wave_len: usize,
    frames: usize,
    outputs: Vec<Array2<f64>>,
}

/// An encoder with its parameters drawn and frozen.
pub struct Encoder {
    spec: EncoderSpec,
    layers: Vec<Layer>,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder").field("spec", &self.spec).finish()
    }
}

impl Encoder {
    pub fn new(spec: EncoderSpec) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        if spec.kind == EncoderKind::RandomStack {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut fan_in = spec.frame_len;
            for &width in &spec.layer_dims {
                let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
                let weight = Array2::from_shape_fn((width, fan_in), |_| normal.sample(&mut rng));
                let bias = Array1::from_shape_fn(width, |_| normal.sample(&mut rng));
                layers.push(Layer { weight, bias });
                fan_in = width;
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn frame_matrix(&self, x: &[f64]) -> Result<Array2<f64>> {
        if x.len() < self.spec.frame_len {
            return Err(Error::TooShort { needed: self.spec.frame_len, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input"));
        }
        let frames = self.spec.frame_count(x.len());
        let (len, hop) = (self.spec.frame_len, self.spec.frame_hop);
        Ok(Array2::from_shape_fn((frames, len), |(t, n)| x[t * hop + n]))
    }

    fn stack_from(&self, outputs: &[Array2<f64>], input: &Array2<f64>) -> Result<LatentStack> {
        let layers = self
            .spec
            .taps
            .iter()
            .map(|&t| {
                let m = if self.spec.kind == EncoderKind::Identity { input } else { &outputs[t] };
                LatentBatch::new(m.ncols(), m.iter().copied().collect(), SetRole::Query)
            })
            .collect::<Result<Vec<_>>>()?;
        LatentStack::new(layers)
    }

    fn forward(&self, input: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = input.to_owned();
        for layer in &self.layers {
            h = h.dot(&layer.weight.t()) + &layer.bias;
            h.mapv_inplace(f64::tanh);
            outputs.push(h.clone());
        }
        outputs
    }

    pub fn encode(&self, w: &Waveform) -> Result<LatentStack> {
        self.encode_samples(w.samples())
    }

    pub fn encode_samples(&self, x: &[f64]) -> Result<LatentStack> {
        Ok(self.encode_with_cache(x)?.0)
    }

    pub fn encode_with_cache(&self, x: &[f64]) -> Result<(LatentStack, EncoderCache)> {
        let input = self.frame_matrix(x)?;
        let outputs = self.forward(input.view());
        let stack = self.stack_from(&outputs, &input)?;
        let cache = EncoderCache { wave_len: x.len(), frames: input.nrows(), outputs };
        Ok((stack, cache))
    }

    /// Gradient of `sum_taps <upstream_tap, latent_tap>` with respect to the
    /// waveform samples; frame gradients are overlap-added.
    pub fn backward(&self, cache: &EncoderCache, upstream: &LatentStack) -> Result<Vec<f64>> {
        if upstream.frames() != cache.frames || upstream.layers().len() != self.spec.taps.len() {
            return Err(Error::DimensionMismatch { expected: cache.frames, found: upstream.frames() });
        }
        let as_matrix = |b: &LatentBatch| Array2::from_shape_vec((b.len(), b.dim()), b.as_slice().to_vec()).unwrap();
        let mut grad_input = Array2::<f64>::zeros((cache.frames, self.spec.frame_len));
        match self.spec.kind {
            EncoderKind::Identity => grad_input += &as_matrix(upstream.layer(0)),
            EncoderKind::RandomStack => {
                let mut pending: Option<Array2<f64>> = None;
                for l in (0..self.layers.len()).rev() {
                    let out = &cache.outputs[l];
                    let mut g = pending.take().unwrap_or_else(|| Array2::zeros(out.raw_dim()));
                    if let Some(pos) = self.spec.taps.iter().position(|&t| t == l) {
                        let up = upstream.layer(pos);
                        if up.dim() != out.ncols() {
                            return Err(Error::DimensionMismatch { expected: out.ncols(), found: up.dim() });
                        }
                        g += &as_matrix(up);
                    }
                    // d tanh = 1 - h^2
                    g.zip_mut_with(out, |gi, &h| *gi *= 1.0 - h * h);
                    let down = g.dot(&self.layers[l].weight);
                    if l == 0 {
                        grad_input = down;
                    } else {
                        pending = Some(down);
                    }
                }
            }
        }
        let mut grad = vec![0.0; cache.wave_len];
        let hop = self.spec.frame_hop;
        for (t, row) in grad_input.axis_iter(Axis(0)).enumerate() {
            for (g, v) in grad[t * hop..t * hop + self.spec.frame_len].iter_mut().zip(row) {
                *g += v;
            }
        }
        Ok(grad)
    }

    pub fn encode_gradient(&self, w: &Waveform, upstream: &LatentStack) -> Result<Vec<f64>> {
        let (stack, cache) = self.encode_with_cache(w.samples())?;
        if !stack.same_shape(upstream) {
            return Err(Error::DimensionMismatch { expected: stack.frames(), found: upstream.frames() });
        }
        self.backward(&cache, upstream)
    }
}

/// Builds the encoder from `spec` and encodes `w`.
pub fn encode(w: &Waveform, spec: &EncoderSpec) -> Result<LatentStack> {
    Encoder::new(spec.clone())?.encode(w)
}

/// Keeps only the first `frames` rows of every layer.
pub fn truncate_frames(stack: &LatentStack, frames: usize) -> Result<LatentStack> {
    let layers = stack
        .layers()
        .iter()
        .map(|l| {
            let d = l.dim();
            let view = ndarray::ArrayView2::from_shape((l.len(), d), l.as_slice()).unwrap();
            LatentBatch::new(d, view.slice(s![..frames.min(l.len()), ..]).iter().copied().collect(), l.role())
        })
        .collect::<Result<Vec<_>>>()?;
    LatentStack::new(layers)
}

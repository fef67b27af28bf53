//! Equilibrium training: frame-wise drift targets in encoder space, a
//! stop-gradient regression loss, and AdamW updates of the generator.

mod adamw;
mod path;

pub use adamw::{AdamW, BETA1, BETA2, EPSILON};
pub use path::{IdentityPath, SignalPath, SpectralPath};

use std::fmt::Write as _;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::drift::{drift_on_generated, DriftField, KernelConfig, LatentBatch, SelfInclusion, SetRole};
use crate::encoder::{Encoder, EncoderCache, LatentStack};
use crate::error::{Error, Result};
use crate::generator::{sample_sigma, standard_normal, GeneratorParams, NoiseSchedule, ParamGrads, Paradigm, Tape};

/// Noise level used by the direct paradigm during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    Fixed(f64),
    Schedule(NoiseSchedule),
}

impl SigmaMode {
    fn draws_noise(&self) -> bool {
        !matches!(self, SigmaMode::Fixed(s) if *s == 0.0)
    }
}

/// Where the positives of a batch come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    /// Clean references of the batch's own noisy items.
    #[default]
    Paired,
    /// An independent clean pool, sampled without regard to the noisy items.
    Unpaired,
}

/// Which generated frames act as negatives for a generated frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeScope {
    /// Every generated frame in the mini-batch.
    #[default]
    Batch,
    /// Only frames of the same utterance.
    Utterance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub kernel: KernelConfig,
    pub sigma: SigmaMode,
    pub pairing: Pairing,
    pub negatives: NegativeScope,
    pub self_inclusion: SelfInclusion,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 5e-4,
            weight_decay: 0.01,
            epochs: 50,
            kernel: KernelConfig::default(),
            sigma: SigmaMode::Schedule(NoiseSchedule::default()),
            pairing: Pairing::Paired,
            negatives: NegativeScope::Batch,
            self_inclusion: SelfInclusion::Include,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        match self.sigma {
            SigmaMode::Fixed(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::InvalidConfig(format!("fixed sigma must be non-negative, got {s}")))
            }
            SigmaMode::Schedule(s) => s.validate(),
            _ => Ok(()),
        }
    }
}

/// Frozen regression targets `phi + V` for every generated frame, per tap.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftTarget {
    layers: Vec<LatentBatch>,
}

impl DriftTarget {
    pub fn new(generated: &LatentStack, fields: &[DriftField]) -> Result<Self> {
        if fields.len() != generated.layers().len() {
            return Err(Error::DimensionMismatch { expected: generated.layers().len(), found: fields.len() });
        }
        let layers = generated
            .layers()
            .iter()
            .zip(fields)
            .map(|(g, f)| {
                if f.len() != g.len() || f.dim() != g.dim() {
                    return Err(Error::DimensionMismatch { expected: g.as_slice().len(), found: f.vectors().len() });
                }
                let data = g.as_slice().iter().zip(f.vectors()).map(|(x, v)| x + v).collect();
                LatentBatch::new(g.dim(), data, SetRole::Query)
            })
            .collect::<Result<Vec<_>>>()?;
        if layers.iter().any(|l| l.as_slice().iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("drift target"));
        }
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<LatentBatch>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[LatentBatch] {
        &self.layers
    }
}

/// Positive and negative sets per tapped layer: every clean frame and every
/// generated frame of the mini-batch.
pub fn build_sets(clean: &[LatentStack], generated: &[LatentStack]) -> Result<(Vec<LatentBatch>, Vec<LatentBatch>)> {
    if clean.is_empty() {
        return Err(Error::EmptyBatch("clean batch"));
    }
    if generated.is_empty() {
        return Err(Error::EmptyBatch("generated batch"));
    }
    let n_layers = clean[0].layers().len();
    if let Some(bad) = clean.iter().chain(generated).find(|s| s.layers().len() != n_layers) {
        return Err(Error::DimensionMismatch { expected: n_layers, found: bad.layers().len() });
    }
    let gather = |stacks: &[LatentStack], l: usize, role: SetRole| {
        let parts: Vec<&LatentBatch> = stacks.iter().map(|s| s.layer(l)).collect();
        LatentBatch::concat(&parts, role)
    };
    let pos = (0..n_layers).map(|l| gather(clean, l, SetRole::Positive)).collect::<Result<Vec<_>>>()?;
    let neg = (0..n_layers).map(|l| gather(generated, l, SetRole::Negative)).collect::<Result<Vec<_>>>()?;
    Ok((pos, neg))
}

/// Mean over layers of the mean squared distance to the targets, together
/// with the cotangent on every generated latent. Targets are constants.
pub fn drift_loss(generated: &LatentStack, targets: &DriftTarget) -> Result<(f64, LatentStack)> {
    let layers = generated.layers();
    if targets.layers().len() != layers.len() {
        return Err(Error::DimensionMismatch { expected: layers.len(), found: targets.layers().len() });
    }
    let n_layers = layers.len() as f64;
    let mut loss = 0.0;
    let mut cotangents = Vec::with_capacity(layers.len());
    for (g, t) in layers.iter().zip(targets.layers()) {
        if g.dim() != t.dim() || g.len() != t.len() {
            return Err(Error::DimensionMismatch { expected: g.as_slice().len(), found: t.as_slice().len() });
        }
        let frames = g.len() as f64;
        let diff: Vec<f64> = g.as_slice().iter().zip(t.as_slice()).map(|(a, b)| a - b).collect();
        let layer_loss: f64 = diff.chunks(g.dim()).map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / frames;
        loss += layer_loss / n_layers;
        let scale = 2.0 / (n_layers * frames);
        cotangents.push(LatentBatch::new(g.dim(), diff.into_iter().map(|d| scale * d).collect(), SetRole::Query)?);
    }
    Ok((loss, LatentStack::new(cotangents)?))
}

/// One mini-batch. `noisy[i]` is the input of item `i`; `clean` holds the
/// positives (the paired references, or an independent pool).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub noisy: Vec<Vec<f64>>,
    pub clean: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Mean drift norm per tapped layer.
    pub drift_norms: Vec<f64>,
    pub sigma_mean: f64,
}

/// Loss, gradients and the generated waveforms of one batch.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub stats: StepStats,
    pub grads: ParamGrads,
    pub generated: Vec<Vec<f64>>,
}

struct Forward {
    out: Array2<f64>,
    tape: Tape,
    sigmas: Vec<f64>,
    /// Generator rows per utterance and their offsets into `out`.
    counts: Vec<usize>,
    offsets: Vec<usize>,
    generated: Vec<Vec<f64>>,
    encoded: Vec<(LatentStack, EncoderCache)>,
}

/// Slices one latent stack per utterance out of batch-level layers.
fn split_stack(all: &LatentStack, frames: &[usize]) -> Result<Vec<LatentStack>> {
    let mut out = Vec::with_capacity(frames.len());
    let mut start = 0;
    for &n in frames {
        let layers = all
            .layers()
            .iter()
            .map(|l| {
                let d = l.dim();
                LatentBatch::new(d, l.as_slice()[start * d..(start + n) * d].to_vec(), l.role())
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(LatentStack::new(layers)?);
        start += n;
    }
    Ok(out)
}

pub struct Trainer<P: SignalPath> {
    config: TrainConfig,
    params: GeneratorParams,
    encoder: Encoder,
    path: P,
    optimizer: AdamW,
    rng: ChaCha8Rng,
    steps: u64,
}

impl<P: SignalPath> std::fmt::Debug for Trainer<P> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer").field("config", &self.config).field("steps", &self.steps).finish_non_exhaustive()
    }
}

impl<P: SignalPath> Trainer<P> {
    /// All randomness after construction comes from one stream seeded with
    /// `config.seed`, consumed in a fixed order.
    pub fn new(config: TrainConfig, params: GeneratorParams, encoder: Encoder, path: P) -> Result<Self> {
        config.validate()?;
        if params.config().data_dim != path.row_dim() {
            return Err(Error::DimensionMismatch { expected: path.row_dim(), found: params.config().data_dim });
        }
        let optimizer = AdamW::new(params.parameter_count());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { config, params, encoder, path, optimizer, rng, steps: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &GeneratorParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut GeneratorParams {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn path(&self) -> &P {
        &self.path
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Replaces the learning rate used by subsequent steps.
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be non-negative, got {lr}")));
        }
        self.config.lr = lr;
        Ok(())
    }

    fn rows_matrix(&self, flat: Vec<f64>) -> Array2<f64> {
        let d = self.path.row_dim();
        Array2::from_shape_vec((flat.len() / d, d), flat).expect("rows are a multiple of the row width")
    }

    /// Runs the generator on stacked rows. Returns outputs, tape and the
    /// per-item sigma.
    fn generate_rows(&mut self, rows: &Array2<f64>, counts: &[usize]) -> Result<(Array2<f64>, Tape, Vec<f64>)> {
        match self.params.paradigm() {
            Paradigm::DirectMapping => {
                let sigma_items: Vec<f64> = match self.config.sigma {
                    SigmaMode::Fixed(s) => vec![s; counts.len()],
                    SigmaMode::Schedule(sched) => {
                        counts.iter().map(|_| sample_sigma(&sched, &mut self.rng)).collect::<Result<_>>()?
                    }
                };
                let sigma_rows: Vec<f64> =
                    counts.iter().zip(&sigma_items).flat_map(|(&n, &s)| std::iter::repeat(s).take(n)).collect();
                let eps = if self.config.sigma.draws_noise() {
                    standard_normal(&mut self.rng, rows.nrows(), rows.ncols())
                } else {
                    Array2::zeros(rows.raw_dim())
                };
                let (out, tape) = self.params.forward_direct_batch(rows.view(), &sigma_rows, eps.view())?;
                Ok((out, tape, sigma_items))
            }
            Paradigm::Conditional => {
                let eps = standard_normal(&mut self.rng, rows.nrows(), self.params.config().noise_dim);
                let (out, tape) = self.params.forward_conditional_batch(eps.view(), rows.view())?;
                Ok((out, tape, vec![0.0; counts.len()]))
            }
        }
    }

    fn fields(&self, pos: &[LatentBatch], generated: &[LatentStack], neg: &[LatentBatch]) -> Result<Vec<DriftField>> {
        let cfg = &self.config.kernel;
        let incl = self.config.self_inclusion;
        match self.config.negatives {
            NegativeScope::Batch => pos.iter().zip(neg).map(|(p, n)| drift_on_generated(n, p, cfg, incl)).collect(),
            NegativeScope::Utterance => (0..pos.len())
                .map(|l| {
                    let per_item = generated
                        .iter()
                        .map(|g| drift_on_generated(g.layer(l), &pos[l], cfg, incl))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(DriftField::concat(&per_item))
                })
                .collect(),
        }
    }

    /// Generator, synthesis and encoder forward passes for a batch.
    fn forward(&mut self, noisy: &[Vec<f64>]) -> Result<Forward> {
        if noisy.is_empty() {
            return Err(Error::EmptyBatch("noisy batch"));
        }
        let d = self.path.row_dim();
        let analyzed = noisy.iter().map(|x| self.path.analyze(x)).collect::<Result<Vec<_>>>()?;
        let counts: Vec<usize> = analyzed.iter().map(|r| r.len() / d).collect();
        let rows = self.rows_matrix(analyzed.concat());
        let (out, tape, sigmas) = self.generate_rows(&rows, &counts)?;
        let mut offsets = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for &n in &counts {
            offsets.push(acc);
            acc += n * d;
        }
        let out_flat = out.as_slice().expect("standard layout");
        let path = &self.path;
        let encoder = &self.encoder;
        let generated: Vec<Vec<f64>> = counts
            .par_iter()
            .zip(&offsets)
            .zip(noisy)
            .map(|((&n, &o), x)| path.synthesize(&out_flat[o..o + n * d], x.len()))
            .collect::<Result<_>>()?;
        let encoded: Vec<(LatentStack, EncoderCache)> =
            generated.par_iter().map(|g| encoder.encode_with_cache(g)).collect::<Result<_>>()?;
        Ok(Forward { out, tape, sigmas, counts, offsets, generated, encoded })
    }

    /// Parameter gradients for a cotangent on the batch-level generated
    /// latents (utterances concatenated in batch order).
    fn backward(&self, fwd: &Forward, cotangent: &LatentStack) -> Result<ParamGrads> {
        let d = self.path.row_dim();
        let frames: Vec<usize> = fwd.encoded.iter().map(|(s, _)| s.frames()).collect();
        let upstream = split_stack(cotangent, &frames)?;
        let out_flat = fwd.out.as_slice().expect("standard layout");
        let path = &self.path;
        let encoder = &self.encoder;
        let row_grads: Vec<Vec<f64>> = fwd
            .encoded
            .par_iter()
            .zip(&upstream)
            .zip(fwd.counts.par_iter().zip(&fwd.offsets))
            .map(|(((_, cache), up), (&n, &o))| {
                let wave_grad = encoder.backward(cache, up)?;
                path.synthesize_vjp(&out_flat[o..o + n * d], wave_grad.len(), &wave_grad)
            })
            .collect::<Result<_>>()?;
        let cot = Array2::from_shape_vec((fwd.out.nrows(), d), row_grads.concat()).expect("row gradients match the output shape");
        self.params.backward(&fwd.tape, cot.view())
    }

    fn generated_stack(fwd: &Forward) -> Result<LatentStack> {
        let stacks: Vec<LatentStack> = fwd.encoded.iter().map(|(s, _)| s.clone()).collect();
        let n_layers = stacks[0].layers().len();
        let layers = (0..n_layers)
            .map(|l| {
                let parts: Vec<&LatentBatch> = stacks.iter().map(|s| s.layer(l)).collect();
                LatentBatch::concat(&parts, SetRole::Negative)
            })
            .collect::<Result<Vec<_>>>()?;
        LatentStack::new(layers)
    }

    /// Loss and parameter gradients for one batch, without updating.
    pub fn compute(&mut self, batch: &Batch) -> Result<StepOutcome> {
        if batch.clean.is_empty() {
            return Err(Error::EmptyBatch("clean batch"));
        }
        let fwd = self.forward(&batch.noisy)?;
        let encoder = &self.encoder;
        let clean_enc: Vec<LatentStack> = batch.clean.par_iter().map(|c| encoder.encode_samples(c)).collect::<Result<_>>()?;
        let gen_stacks: Vec<LatentStack> = fwd.encoded.iter().map(|(s, _)| s.clone()).collect();
        let (pos, neg) = build_sets(&clean_enc, &gen_stacks)?;
        let fields = self.fields(&pos, &gen_stacks, &neg)?;
        let all_generated = LatentStack::new(neg)?;
        let targets = DriftTarget::new(&all_generated, &fields)?;
        let (loss, cotangent) = drift_loss(&all_generated, &targets)?;
        let drift_norms: Vec<f64> = fields.iter().map(DriftField::mean_norm).collect();
        let sigma_mean = fwd.sigmas.iter().sum::<f64>() / fwd.sigmas.len() as f64;
        if !loss.is_finite() {
            return Err(self.diagnostic("non-finite loss", batch, &fwd.sigmas, &drift_norms));
        }
        let grads = self.backward(&fwd, &cotangent)?;
        if grads.layers.iter().any(|l| l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite())) {
            return Err(self.diagnostic("non-finite gradient", batch, &fwd.sigmas, &drift_norms));
        }
        Ok(StepOutcome { stats: StepStats { loss, drift_norms, sigma_mean }, grads, generated: fwd.generated })
    }

    /// Loss against fixed targets and its exact parameter gradient. This is
    /// the objective each step minimizes once its targets are frozen.
    pub fn loss_against(&mut self, noisy: &[Vec<f64>], targets: &DriftTarget) -> Result<(f64, ParamGrads)> {
        let fwd = self.forward(noisy)?;
        let (loss, cotangent) = drift_loss(&Self::generated_stack(&fwd)?, targets)?;
        Ok((loss, self.backward(&fwd, &cotangent)?))
    }

    /// Encoder latents of the generated batch, utterances concatenated.
    pub fn generated_latents(&mut self, noisy: &[Vec<f64>]) -> Result<LatentStack> {
        Self::generated_stack(&self.forward(noisy)?)
    }

    fn diagnostic(&self, what: &str, batch: &Batch, sigmas: &[f64], norms: &[f64]) -> Error {
        let mut s = String::new();
        let _ = write!(s, "{what} at step {}: items {:?}, sigma {:?}, drift norms {:?}", self.steps, batch.ids, sigmas, norms);
        Error::Numerical(s)
    }

    /// One optimization step.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepStats> {
        let outcome = self.compute(batch)?;
        self.optimizer.update_generator(&mut self.params, &outcome.grads, self.config.lr, self.config.weight_decay)?;
        if !self.params.is_finite() {
            return Err(self.diagnostic("non-finite parameters", batch, &[outcome.stats.sigma_mean], &outcome.stats.drift_norms));
        }
        self.steps += 1;
        Ok(outcome.stats)
    }

    /// One-step enhancement of a single waveform. The direct paradigm adds
    /// `sigma * eps` to its input (no randomness is drawn when `sigma` is 0);
    /// the conditional paradigm ignores `sigma` and draws a fresh `eps`.
    pub fn enhance<R: rand::Rng + ?Sized>(&self, noisy: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
        enhance(&self.params, &self.path, noisy, sigma, rng)
    }
}

/// See [`Trainer::enhance`].
pub fn enhance<P: SignalPath + ?Sized, R: rand::Rng + ?Sized>(
    params: &GeneratorParams,
    path: &P,
    noisy: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = path.row_dim();
    let flat = path.analyze(noisy)?;
    let rows = Array2::from_shape_vec((flat.len() / d, d), flat).expect("rows are a multiple of the row width");
    let out = match params.paradigm() {
        Paradigm::DirectMapping => {
            let eps = if sigma == 0.0 { Array2::zeros(rows.raw_dim()) } else { standard_normal(rng, rows.nrows(), d) };
            params.forward_direct_batch(rows.view(), &vec![sigma; rows.nrows()], eps.view())?.0
        }
        Paradigm::Conditional => {
            let eps = standard_normal(rng, rows.nrows(), params.config().noise_dim);
            params.forward_conditional_batch(eps.view(), rows.view())?.0
        }
    };
    path.synthesize(out.as_slice().expect("standard layout"), noisy.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::drift_multi_temperature;
    use crate::encoder::EncoderSpec;
    use crate::generator::GeneratorConfig;
    use crate::signal::{Compression, StftConfig};
    use rand::Rng;

    fn small_path() -> SpectralPath {
        SpectralPath::new(StftConfig { window_len: 64, hop: 16, fft_size: 64 }, Compression::default()).unwrap()
    }

    fn small_encoder() -> Encoder {
        Encoder::new(EncoderSpec {
            layer_dims: vec![8, 8],
            taps: vec![0, 1],
            frame_len: 64,
            frame_hop: 32,
            ..EncoderSpec::default()
        })
        .unwrap()
    }

    fn waves(seed: u64, n: usize, len: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..len).map(|_| rng.gen_range(-0.3..0.3)).collect()).collect()
    }

    fn trainer(cfg: TrainConfig) -> Trainer<SpectralPath> {
        let path = small_path();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = GeneratorParams::new(GeneratorConfig::direct(path.row_dim(), vec![16]), &mut rng).unwrap();
        Trainer::new(cfg, params, small_encoder(), path).unwrap()
    }

    fn stack(dim: usize, data: Vec<f64>) -> LatentStack {
        LatentStack::new(vec![LatentBatch::new(dim, data, SetRole::Query).unwrap()]).unwrap()
    }

    #[test]
    fn loss_of_single_drift_vector() {
        let g = stack(2, vec![1.0, 1.0]);
        let t = DriftTarget::from_layers(vec![LatentBatch::new(2, vec![4.0, 5.0], SetRole::Query).unwrap()]);
        let (loss, cot) = drift_loss(&g, &t).unwrap();
        assert_eq!(loss, 25.0);
        assert_eq!(cot.layer(0).as_slice(), &[-6.0, -8.0]);
    }

    #[test]
    fn zero_drift_gives_zero_loss_and_cotangent() {
        let g = stack(3, vec![0.1, 0.2, 0.3, -1.0, 0.0, 2.0]);
        let t = DriftTarget::from_layers(g.layers().to_vec());
        let (loss, cot) = drift_loss(&g, &t).unwrap();
        assert_eq!(loss, 0.0);
        assert!(cot.layer(0).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_equals_mean_squared_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = |n: usize, d: usize| {
            LatentBatch::new(d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(), SetRole::Query).unwrap()
        };
        let gen = LatentStack::new(vec![layer(20, 3), layer(20, 5)]).unwrap();
        let pos = [layer(30, 3), layer(30, 5)];
        let cfg = KernelConfig::default();
        let fields: Vec<DriftField> = gen
            .layers()
            .iter()
            .zip(&pos)
            .map(|(g, p)| drift_on_generated(g, p, &cfg, SelfInclusion::Include).unwrap())
            .collect();
        let targets = DriftTarget::new(&gen, &fields).unwrap();
        let (loss, _) = drift_loss(&gen, &targets).unwrap();
        // Independent recomputation of the field.
        let mut want = 0.0;
        for (g, p) in gen.layers().iter().zip(&pos) {
            let v = drift_multi_temperature(g, p, g, &cfg).unwrap();
            want += v.vectors().iter().map(|x| x * x).sum::<f64>() / g.len() as f64 / 2.0;
        }
        assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
    }

    #[test]
    fn cotangent_is_the_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let targets = DriftTarget::from_layers(vec![
            LatentBatch::new(2, t[..6].to_vec(), SetRole::Query).unwrap(),
            LatentBatch::new(2, t[6..].to_vec(), SetRole::Query).unwrap(),
        ]);
        let make = |g: &[f64]| {
            LatentStack::new(vec![
                LatentBatch::new(2, g[..6].to_vec(), SetRole::Query).unwrap(),
                LatentBatch::new(2, g[6..].to_vec(), SetRole::Query).unwrap(),
            ])
            .unwrap()
        };
        let (_, cot) = drift_loss(&make(&g), &targets).unwrap();
        let flat: Vec<f64> = cot.layers().iter().flat_map(|l| l.as_slice().to_vec()).collect();
        let h = 1e-6;
        for i in 0..12 {
            let mut p = g.clone();
            let mut m = g.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (drift_loss(&make(&p), &targets).unwrap().0 - drift_loss(&make(&m), &targets).unwrap().0) / (2.0 * h);
            assert!((fd - flat[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn targets_are_constants() {
        // Moving a target changes the loss, but the cotangent only through
        // the explicit difference: no term depends on how the target was made.
        let g = stack(2, vec![0.0, 0.0, 1.0, 1.0]);
        let t0 = DriftTarget::from_layers(vec![LatentBatch::new(2, vec![0.5, 0.0, 1.0, 1.0], SetRole::Query).unwrap()]);
        let t1 = DriftTarget::from_layers(vec![LatentBatch::new(2, vec![0.5, 0.25, 1.0, 1.0], SetRole::Query).unwrap()]);
        let (l0, c0) = drift_loss(&g, &t0).unwrap();
        let (l1, c1) = drift_loss(&g, &t1).unwrap();
        assert_ne!(l0, l1);
        assert_eq!(c1.layer(0).as_slice()[1] - c0.layer(0).as_slice()[1], -2.0 * 0.25 / 2.0);
    }

    #[test]
    fn build_sets_counts_every_frame() {
        let enc = Encoder::new(EncoderSpec::default()).unwrap();
        let w = waves(1, 2, 16000);
        let stacks: Vec<LatentStack> = w.iter().map(|x| enc.encode_samples(x).unwrap()).collect();
        let (pos, neg) = build_sets(&stacks, &stacks).unwrap();
        assert_eq!(pos.len(), 3);
        assert!(pos.iter().chain(&neg).all(|l| l.len() == 98));
        assert!(build_sets(&[], &stacks).is_err());
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let cfg = TrainConfig { weight_decay: 0.0, sigma: SigmaMode::Fixed(0.0), ..TrainConfig::default() };
        let mut t = trainer(cfg);
        let noisy = waves(2, 3, 256);
        let clean: Vec<Vec<f64>> =
            noisy.iter().map(|x| t.path().synthesize(&t.path().analyze(x).unwrap(), x.len()).unwrap()).collect();
        let batch = Batch { ids: vec![0, 1, 2], noisy, clean };
        let before = t.params().clone();
        let out = t.compute(&batch).unwrap();
        assert_eq!(out.generated, batch.clean);
        assert_eq!(out.stats.loss, 0.0);
        assert!(out.stats.drift_norms.iter().all(|&n| n == 0.0));
        assert!(out.grads.is_zero());
        t.train_step(&batch).unwrap();
        assert_eq!(t.params(), &before);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut t = trainer(TrainConfig::default());
            let batch = Batch { ids: vec![0, 1], noisy: waves(3, 2, 256), clean: waves(4, 2, 256) };
            (0..3).map(|_| t.train_step(&batch).unwrap().loss.to_bits()).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|&b| f64::from_bits(b) > 0.0));
    }

    #[test]
    fn training_reduces_loss_on_a_fixed_batch() {
        let cfg = TrainConfig { lr: 2e-3, sigma: SigmaMode::Fixed(0.0), ..TrainConfig::default() };
        let mut t = trainer(cfg);
        let batch = Batch { ids: vec![0, 1], noisy: waves(3, 2, 256), clean: waves(4, 2, 256) };
        let first = t.train_step(&batch).unwrap().loss;
        let mut last = first;
        for _ in 0..30 {
            last = t.train_step(&batch).unwrap().loss;
        }
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn utterance_scope_runs() {
        let cfg = TrainConfig { negatives: NegativeScope::Utterance, ..TrainConfig::default() };
        let mut t = trainer(cfg);
        let batch = Batch { ids: vec![0, 1], noisy: waves(3, 2, 256), clean: waves(4, 2, 256) };
        let s = t.train_step(&batch).unwrap();
        assert!(s.loss > 0.0 && s.sigma_mean >= 0.01 && s.sigma_mean <= 0.3);
    }

    #[test]
    fn sigma_zero_inference_is_deterministic() {
        let t = trainer(TrainConfig::default());
        let x = &waves(6, 1, 256)[0];
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(t.enhance(x, 0.0, &mut r1).unwrap(), t.enhance(x, 0.0, &mut r2).unwrap());
    }

    #[test]
    fn step_gradient_matches_finite_differences() {
        let cfg = TrainConfig { sigma: SigmaMode::Fixed(0.0), ..TrainConfig::default() };
        let path = small_path();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let gcfg = GeneratorConfig { zero_final: false, ..GeneratorConfig::direct(path.row_dim(), vec![8]) };
        let params = GeneratorParams::new(gcfg, &mut rng).unwrap();
        let mut t = Trainer::new(cfg, params, small_encoder(), path).unwrap();
        let noisy = waves(11, 2, 192);
        let latents = t.generated_latents(&noisy).unwrap();
        let targets = DriftTarget::from_layers(
            latents
                .layers()
                .iter()
                .map(|l| {
                    let data = l.as_slice().iter().map(|v| v + rng.gen_range(-0.1..0.1)).collect();
                    LatentBatch::new(l.dim(), data, SetRole::Query).unwrap()
                })
                .collect(),
        );
        let (_, grads) = t.loss_against(&noisy, &targets).unwrap();
        let analytic = grads.flatten();
        let h = 1e-5;
        let n_layers = t.params().layers().len();
        let mut checked = 0;
        for l in 0..n_layers {
            let nw = t.params().layers()[l].weight.len();
            for k in (0..nw).step_by(97) {
                let mut eval = |delta: f64| {
                    *t.params_mut().layers_mut()[l].weight.iter_mut().nth(k).unwrap() += delta;
                    let v = t.loss_against(&noisy, &targets).unwrap().0;
                    *t.params_mut().layers_mut()[l].weight.iter_mut().nth(k).unwrap() -= delta;
                    v
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let offset: usize = t.params().layers()[..l].iter().map(|d| d.weight.len() + d.bias.len()).sum();
                let an = analytic[offset + k];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6), "layer {l} entry {k}: {fd} vs {an}");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { weight_decay: -1.0, ..TrainConfig::default() },
            TrainConfig { sigma: SigmaMode::Fixed(-0.1), ..TrainConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}

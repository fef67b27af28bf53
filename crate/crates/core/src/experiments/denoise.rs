//! Speech-enhancement analogue on synthetic harmonic signals: dynamic
//! mixing, frame-wise drift training in the compressed STFT domain, and
//! held-out evaluation with SI-SDR, MMD and PCA snapshots.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, MmdBandwidth, Task};
use super::output::{density_rows, derive_seed, header, point_rows, write_csv};
use crate::drift::{LatentBatch, SetRole};
use crate::encoder::{Encoder, LatentStack};
use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, GeneratorParams, Paradigm};
use crate::metrics::{centroid_distance, median_distance, mmd2, pca2_fit, si_sdr, spectral_centroid};
use crate::signal::{mix_at_snr, synth_clean, synth_noise, wav, NoiseKind, Waveform};
use crate::trainer::{enhance, Batch, Pairing, SpectralPath, Trainer};

/// Kernel temperature of the MMD diagnostic.
/// Largest absolute sample written to the example WAV files.
const WAV_PEAK: f64 = 0.99;

const DOMAIN_TRAIN: u64 = 1;
const DOMAIN_POOL: u64 = 2;
const DOMAIN_TEST: u64 = 3;
const DOMAIN_TEST_NOISE: u64 = 4;
const DOMAIN_REFERENCE: u64 = 5;

/// Held-out metrics after `epoch` epochs (epoch 0 is the untrained model).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub epoch: usize,
    pub step: usize,
    /// Mean SI-SDR of the noisy inputs against the true clean signals.
    pub si_sdr_noisy: f64,
    pub si_sdr_enhanced: f64,
    /// MMD, averaged over taps, between enhanced frames and the reference
    /// clean frames (the independent pool family for unpaired runs).
    pub mmd2: f64,
    /// Mean spectral centroid of the enhanced signals, Hz.
    pub spectral_centroid: f64,
}

impl EvalRow {
    pub fn improvement(&self) -> f64 {
        self.si_sdr_enhanced - self.si_sdr_noisy
    }
}

/// Centroid distances, in the last tapped layer, at a snapshot epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub epoch: usize,
    pub generated_to_clean: f64,
    pub noisy_to_clean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseResult {
    pub task: Task,
    pub evals: Vec<EvalRow>,
    pub snapshots: Vec<SnapshotRow>,
    pub losses: Vec<f64>,
    pub steps_per_epoch: usize,
    /// Mean spectral centroid of the MMD reference signals, Hz.
    pub reference_centroid: f64,
}

impl DenoiseResult {
    pub fn eval_at(&self, epoch: usize) -> Option<&EvalRow> {
        self.evals.iter().find(|e| e.epoch == epoch)
    }

    pub fn snapshot_at(&self, epoch: usize) -> Option<&SnapshotRow> {
        self.snapshots.iter().find(|s| s.epoch == epoch)
    }

    pub fn last_eval(&self) -> &EvalRow {
        self.evals.last().expect("epoch 0 is always evaluated")
    }

    pub fn summary(&self) -> serde_json::Value {
        let first = &self.evals[0];
        let last = self.last_eval();
        serde_json::json!({
            "task": match self.task { Task::Unpaired => "unpaired", _ => "denoise" },
            "epochs": last.epoch,
            "steps": self.losses.len(),
            "si_sdr_noisy": last.si_sdr_noisy,
            "si_sdr_enhanced": last.si_sdr_enhanced,
            "si_sdr_improvement": last.improvement(),
            "initial_mmd2": first.mmd2,
            "final_mmd2": last.mmd2,
            "spectral_centroid_initial": first.spectral_centroid,
            "spectral_centroid_final": last.spectral_centroid,
            "reference_centroid": self.reference_centroid,
        })
    }
}

struct Corpus {
    train: Vec<Waveform>,
    pool: Vec<Waveform>,
    test_clean: Vec<Waveform>,
    test_noisy: Vec<Waveform>,
    reference: Vec<Waveform>,
}

impl Corpus {
    fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let d = &cfg.data;
        let unpaired = cfg.train.pairing == Pairing::Unpaired;
        let clean = |domain: u64, n: usize, kind| -> Result<Vec<Waveform>> {
            (0..n)
                .map(|i| {
                    let w = synth_clean(derive_seed(seed, domain, i as u64), d.length, kind)?;
                    Ok(w.scaled(d.level / w.rms()))
                })
                .collect()
        };
        let train = clean(DOMAIN_TRAIN, d.train_items, d.clean_kind)?;
        let pool = if unpaired { clean(DOMAIN_POOL, d.pool_items, d.pool_kind)? } else { Vec::new() };
        let test_clean = clean(DOMAIN_TEST, d.test_items, d.clean_kind)?;
        let test_noisy = test_clean
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let kind = NoiseKind::ALL[i % NoiseKind::ALL.len()];
                let noise = synth_noise(derive_seed(seed, DOMAIN_TEST_NOISE, i as u64), d.length, kind)?;
                mix_at_snr(c, &noise, d.eval_snr)
            })
            .collect::<Result<Vec<_>>>()?;
        let reference =
            if unpaired { clean(DOMAIN_REFERENCE, d.test_items, d.pool_kind)? } else { test_clean.clone() };
        Ok(Self { train, pool, test_clean, test_noisy, reference })
    }
}

fn build_params(cfg: &ExperimentConfig, dim: usize, seed: u64) -> Result<GeneratorParams> {
    let g = &cfg.generator;
    let base = match g.paradigm {
        Paradigm::DirectMapping => GeneratorConfig { skip: g.skip, ..GeneratorConfig::direct(dim, g.hidden.clone()) },
        Paradigm::Conditional => GeneratorConfig::conditional(dim, g.hidden.clone()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    GeneratorParams::new(GeneratorConfig { activation: g.activation, ..base }, &mut rng)
}

fn layer_frames(stacks: &[LatentStack], layer: usize) -> Result<LatentBatch> {
    let parts: Vec<&LatentBatch> = stacks.iter().map(|s| s.layer(layer)).collect();
    LatentBatch::concat(&parts, SetRole::Query)
}

struct Evaluator<'a> {
    seed: u64,
    corpus: &'a Corpus,
    encoder: &'a Encoder,
    clean_enc: Vec<LatentStack>,
    noisy_enc: Vec<LatentStack>,
    reference_enc: Vec<LatentStack>,
    mmd_taus: Vec<f64>,
}

struct Evaluation {
    row: EvalRow,
    enhanced: Vec<Waveform>,
    enhanced_enc: Vec<LatentStack>,
}

impl<'a> Evaluator<'a> {
    fn new(seed: u64, corpus: &'a Corpus, encoder: &'a Encoder, bandwidth: MmdBandwidth) -> Result<Self> {
        let enc = |ws: &[Waveform]| ws.iter().map(|w| encoder.encode(w)).collect::<Result<Vec<_>>>();
        let reference_enc = enc(&corpus.reference)?;
        let mmd_taus = (0..encoder.spec().taps.len())
            .map(|l| match bandwidth {
                MmdBandwidth::Fixed(t) => Ok(t),
                MmdBandwidth::Median => median_distance(&layer_frames(&reference_enc, l)?),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seed,
            corpus,
            encoder,
            clean_enc: enc(&corpus.test_clean)?,
            noisy_enc: enc(&corpus.test_noisy)?,
            reference_enc,
            mmd_taus,
        })
    }

    fn run(&self, params: &GeneratorParams, path: &SpectralPath, epoch: usize, step: usize) -> Result<Evaluation> {
        // The conditional paradigm draws the same eps at every evaluation.
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2);
        let enhanced = self
            .corpus
            .test_noisy
            .iter()
            .map(|y| Waveform::from_samples(enhance(params, path, y.samples(), 0.0, &mut rng)?))
            .collect::<Result<Vec<_>>>()?;
        let enhanced_enc = enhanced.iter().map(|w| self.encoder.encode(w)).collect::<Result<Vec<_>>>()?;
        let n = enhanced.len() as f64;
        let mut si_noisy = 0.0;
        let mut si_enh = 0.0;
        let mut centroid = 0.0;
        for ((e, y), c) in enhanced.iter().zip(&self.corpus.test_noisy).zip(&self.corpus.test_clean) {
            si_noisy += si_sdr(y, c)? / n;
            si_enh += si_sdr(e, c)? / n;
            centroid += spectral_centroid(e).unwrap_or(0.0) / n;
        }
        let taps = self.encoder.spec().taps.len();
        let mut mmd = 0.0;
        for l in 0..taps {
            mmd += mmd2(&layer_frames(&enhanced_enc, l)?, &layer_frames(&self.reference_enc, l)?, self.mmd_taus[l])? / taps as f64;
        }
        let row = EvalRow { epoch, step, si_sdr_noisy: si_noisy, si_sdr_enhanced: si_enh, mmd2: mmd, spectral_centroid: centroid };
        Ok(Evaluation { row, enhanced, enhanced_enc })
    }

    /// PCA of clean, noisy and generated frames of the last tap.
    fn snapshot(&self, eval: &Evaluation, out: Option<&Path>) -> Result<SnapshotRow> {
        let last = self.encoder.spec().taps.len() - 1;
        let clean = layer_frames(&self.clean_enc, last)?;
        let noisy = layer_frames(&self.noisy_enc, last)?;
        let generated = layer_frames(&eval.enhanced_enc, last)?;
        let epoch = eval.row.epoch;
        if let Some(dir) = out {
            let all = LatentBatch::concat(&[&clean, &noisy, &generated], SetRole::Query)?;
            let pca = pca2_fit(&all)?;
            let (pc, pn, pg) = (pca.project(&clean), pca.project(&noisy), pca.project(&generated));
            let sets: [(&str, &[[f64; 2]]); 3] = [("clean", &pc), ("noisy", &pn), ("generated", &pg)];
            write_csv(&dir.join(format!("snapshot_epoch{epoch}.csv")), &header(&["set", "x", "y"]), &point_rows(&sets))?;
            write_csv(
                &dir.join(format!("density_epoch{epoch}.csv")),
                &header(&["set", "x", "y", "density"]),
                &density_rows(&sets, 32),
            )?;
        }
        Ok(SnapshotRow {
            epoch,
            generated_to_clean: centroid_distance(&generated, &clean)?,
            noisy_to_clean: centroid_distance(&noisy, &clean)?,
        })
    }
}

/// Trains on dynamically mixed synthetic utterances for `cfg.train.epochs`
/// epochs. The unpaired task draws positives from an independent clean pool.
pub fn run_denoise(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<DenoiseResult> {
    let mut cfg = cfg.clone();
    if cfg.task == Task::Unpaired {
        cfg.train.pairing = Pairing::Unpaired;
    }
    cfg.train.seed = seed;
    let corpus = Corpus::build(&cfg, seed)?;
    let path = SpectralPath::new(cfg.stft, cfg.compression)?;
    let params = build_params(&cfg, crate::trainer::SignalPath::row_dim(&path), seed)?;
    let encoder = Encoder::new(cfg.encoder.clone())?;
    let evaluator_encoder = Encoder::new(cfg.encoder.clone())?;
    let evaluator = Evaluator::new(seed, &corpus, &evaluator_encoder, cfg.output.mmd_tau)?;
    let mut trainer = Trainer::new(cfg.train.clone(), params, encoder, path)?;

    let taps = cfg.encoder.taps.len();
    let batch_size = cfg.train.batch_size;
    let steps_per_epoch = corpus.train.len().div_ceil(batch_size);
    let mut result = DenoiseResult {
        task: cfg.task,
        evals: Vec::new(),
        snapshots: Vec::new(),
        losses: Vec::new(),
        steps_per_epoch,
        reference_centroid: corpus.reference.iter().map(|w| spectral_centroid(w)).sum::<Result<f64>>()?
            / corpus.reference.len() as f64,
    };
    let mut trace: Vec<Vec<String>> = Vec::new();
    let mut final_eval = None;

    let first = evaluator.run(trainer.params(), trainer.path(), 0, 0)?;
    result.evals.push(first.row.clone());

    for epoch in 1..=cfg.train.epochs {
        let mut order: Vec<usize> = (0..corpus.train.len()).collect();
        order.shuffle(trainer.rng_mut());
        for chunk in order.chunks(batch_size) {
            let rng = trainer.rng_mut();
            let mut noisy = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let noise_seed: u64 = rng.gen();
                let kind = NoiseKind::ALL[rng.gen_range(0..NoiseKind::ALL.len())];
                let snr = cfg.data.train_snrs[rng.gen_range(0..cfg.data.train_snrs.len())];
                let noise = synth_noise(noise_seed, cfg.data.length, kind)?;
                noisy.push(mix_at_snr(&corpus.train[i], &noise, snr)?.into_samples());
            }
            let clean: Vec<Vec<f64>> = match cfg.train.pairing {
                Pairing::Paired => chunk.iter().map(|&i| corpus.train[i].samples().to_vec()).collect(),
                Pairing::Unpaired => (0..chunk.len())
                    .map(|_| corpus.pool[rng.gen_range(0..corpus.pool.len())].samples().to_vec())
                    .collect(),
            };
            let stats = trainer.train_step(&Batch { ids: chunk.to_vec(), noisy, clean })?;
            result.losses.push(stats.loss);
            let mut row = vec![result.losses.len().to_string(), epoch.to_string(), stats.loss.to_string()];
            row.extend(stats.drift_norms.iter().map(f64::to_string));
            row.push(stats.sigma_mean.to_string());
            row.push(String::new());
            trace.push(row);
        }
        let snapshot = cfg.output.snapshot_epochs.contains(&epoch);
        if epoch % cfg.output.eval_every == 0 || epoch == cfg.train.epochs || snapshot {
            let eval = evaluator.run(trainer.params(), trainer.path(), epoch, trainer.steps() as usize)?;
            if !eval.row.si_sdr_enhanced.is_finite() {
                return Err(Error::NonFinite("held-out SI-SDR"));
            }
            *trace.last_mut().expect("at least one step per epoch").last_mut().unwrap() = eval.row.mmd2.to_string();
            if snapshot {
                result.snapshots.push(evaluator.snapshot(&eval, out)?);
            }
            result.evals.push(eval.row.clone());
            final_eval = Some(eval);
        }
    }

    if let Some(dir) = out {
        let mut cols = vec!["step".to_string(), "epoch".into(), "loss".into()];
        cols.extend((0..taps).map(|l| format!("mean_drift_norm_{l}")));
        cols.extend(["sigma_mean".to_string(), "mmd2".into()]);
        write_csv(&dir.join("trace.csv"), &cols, &trace)?;
        let eval_rows: Vec<Vec<String>> = result
            .evals
            .iter()
            .map(|e| {
                vec![
                    e.epoch.to_string(),
                    e.step.to_string(),
                    e.si_sdr_noisy.to_string(),
                    e.si_sdr_enhanced.to_string(),
                    e.improvement().to_string(),
                    e.mmd2.to_string(),
                    e.spectral_centroid.to_string(),
                ]
            })
            .collect();
        write_csv(
            &dir.join("eval.csv"),
            &header(&["epoch", "step", "si_sdr_noisy", "si_sdr_enhanced", "si_sdr_improvement", "mmd2", "spectral_centroid"]),
            &eval_rows,
        )?;
        let snap_rows: Vec<Vec<String>> = result
            .snapshots
            .iter()
            .map(|s| vec![s.epoch.to_string(), s.generated_to_clean.to_string(), s.noisy_to_clean.to_string()])
            .collect();
        write_csv(&dir.join("centroids.csv"), &header(&["epoch", "generated_to_clean", "noisy_to_clean"]), &snap_rows)?;
        let enhanced = final_eval.map(|e| e.enhanced).unwrap_or(first.enhanced);
        for i in 0..cfg.output.wav_examples.min(corpus.test_clean.len()) {
            let trio = [("clean", &corpus.test_clean[i]), ("noisy", &corpus.test_noisy[i]), ("enhanced", &enhanced[i])];
            // One shared gain keeps the three files comparable and inside the PCM range.
            let peak = trio.iter().flat_map(|(_, w)| w.samples()).fold(0.0f64, |m, v| m.max(v.abs()));
            let gain = if peak > WAV_PEAK { WAV_PEAK / peak } else { 1.0 };
            for (name, w) in trio {
                wav::write_wav(dir.join(format!("{name}_{i}.wav")), &w.scaled(gain))?;
            }
        }
        trainer.params().save(dir.join("generator.bin"))?;
    }
    Ok(result)
}

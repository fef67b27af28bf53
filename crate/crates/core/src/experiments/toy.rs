//! Two-dimensional sanity task: push a standard Gaussian prior onto a
//! mixture target with the drift loss and an identity encoder.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ExperimentConfig, ToyTarget};
use super::output::{density_rows, header, point_rows, write_csv};
use crate::drift::{KernelConfig, LatentBatch, SetRole};
use crate::encoder::{Encoder, EncoderSpec};
use crate::error::Result;
use crate::generator::{GeneratorConfig, GeneratorParams};
use crate::metrics::mmd2;
use crate::trainer::{Batch, IdentityPath, SigmaMode, TrainConfig, Trainer};

/// Kernel temperature of the MMD diagnostic.
pub const MMD_TAU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyResult {
    /// `(step, mmd2)` at every evaluation, starting at step 0.
    pub mmd: Vec<(usize, f64)>,
    pub losses: Vec<f64>,
}

impl ToyResult {
    pub fn initial_mmd(&self) -> f64 {
        self.mmd[0].1
    }

    pub fn final_mmd(&self) -> f64 {
        self.mmd.last().expect("step 0 is always evaluated").1
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "task": "toy2d",
            "steps": self.losses.len(),
            "initial_mmd2": self.initial_mmd(),
            "final_mmd2": self.final_mmd(),
            "ratio": self.final_mmd() / self.initial_mmd(),
        })
    }
}

fn sample_target<R: Rng + ?Sized>(cfg: &super::ToyConfig, rng: &mut R) -> [f64; 2] {
    let (nx, ny): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
    match cfg.target {
        ToyTarget::Gaussian => [nx, ny],
        ToyTarget::Ring => {
            let k = rng.gen_range(0..cfg.components);
            let a = 2.0 * PI * k as f64 / cfg.components as f64;
            [cfg.radius * a.cos() + cfg.std * nx, cfg.radius * a.sin() + cfg.std * ny]
        }
    }
}

fn sample_prior<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

fn pushforward(params: &GeneratorParams, prior: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let x = Array2::from_shape_vec((prior.len(), 2), prior.iter().flatten().copied().collect()).expect("n x 2");
    let zero = Array2::zeros(x.raw_dim());
    let (y, _) = params.forward_direct_batch(x.view(), &vec![0.0; prior.len()], zero.view())?;
    Ok(y.outer_iter().map(|r| [r[0], r[1]]).collect())
}

fn as_batch(points: &[[f64; 2]]) -> Result<LatentBatch> {
    LatentBatch::new(2, points.iter().flatten().copied().collect(), SetRole::Query)
}

/// Trains for `cfg.toy.steps` steps and evaluates MMD every
/// `cfg.toy.eval_every` steps on fixed prior and target samples.
pub fn run_toy2d(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<ToyResult> {
    let toy = &cfg.toy;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(1);
    let gen_cfg = GeneratorConfig {
        activation: cfg.generator.activation,
        ..GeneratorConfig::direct(2, toy.hidden.clone())
    };
    let params = GeneratorParams::new(gen_cfg, &mut init_rng)?;
    let train = TrainConfig {
        batch_size: toy.batch_size,
        lr: toy.lr,
        weight_decay: toy.weight_decay,
        epochs: 1,
        kernel: KernelConfig::new(toy.temperatures.clone())?,
        sigma: SigmaMode::Fixed(0.0),
        seed,
        ..cfg.train.clone()
    };
    let encoder = Encoder::new(EncoderSpec::identity(2, 2))?;
    let mut trainer = Trainer::new(train, params, encoder, IdentityPath::new(2)?)?;

    let rng = trainer.rng_mut();
    let eval_prior: Vec<[f64; 2]> = (0..toy.eval_points).map(|_| sample_prior(rng)).collect();
    let eval_target: Vec<[f64; 2]> = (0..toy.eval_points).map(|_| sample_target(toy, rng)).collect();
    let target_batch = as_batch(&eval_target)?;

    let mut result = ToyResult { mmd: Vec::new(), losses: Vec::with_capacity(toy.steps) };
    let mut trace = Vec::with_capacity(toy.steps);
    let mut snapshots = Vec::new();
    let mut evaluate = |step: usize, params: &GeneratorParams, result: &mut ToyResult| -> Result<f64> {
        let generated = pushforward(params, &eval_prior)?;
        let m = mmd2(&as_batch(&generated)?, &target_batch, MMD_TAU)?;
        result.mmd.push((step, m));
        if toy.snapshot_steps.contains(&step) {
            snapshots.push((step, generated));
        }
        Ok(m)
    };
    let m0 = evaluate(0, trainer.params(), &mut result)?;
    trace.push(vec!["0".into(), String::new(), String::new(), "0".into(), m0.to_string()]);

    for step in 1..=toy.steps {
        let rng = trainer.rng_mut();
        let noisy: Vec<Vec<f64>> = (0..toy.batch_size).map(|_| sample_prior(rng).to_vec()).collect();
        let clean: Vec<Vec<f64>> = (0..toy.batch_size).map(|_| sample_target(toy, rng).to_vec()).collect();
        let batch = Batch { ids: (0..toy.batch_size).collect(), noisy, clean };
        if toy.cosine_decay {
            let progress = (step - 1) as f64 / toy.steps as f64;
            trainer.set_lr(0.5 * toy.lr * (1.0 + (PI * progress).cos()))?;
        }
        let stats = trainer.train_step(&batch)?;
        result.losses.push(stats.loss);
        let mmd = if step % toy.eval_every == 0 || step == toy.steps {
            evaluate(step, trainer.params(), &mut result)?.to_string()
        } else {
            String::new()
        };
        trace.push(vec![
            step.to_string(),
            stats.loss.to_string(),
            stats.drift_norms[0].to_string(),
            stats.sigma_mean.to_string(),
            mmd,
        ]);
    }

    if let Some(dir) = out {
        write_csv(&dir.join("trace.csv"), &header(&["step", "loss", "mean_drift_norm_0", "sigma_mean", "mmd2"]), &trace)?;
        for (step, generated) in &snapshots {
            let sets: [(&str, &[[f64; 2]]); 2] = [("target", &eval_target), ("generated", generated)];
            write_csv(&dir.join(format!("snapshot_step{step}.csv")), &header(&["set", "x", "y"]), &point_rows(&sets))?;
            write_csv(
                &dir.join(format!("density_step{step}.csv")),
                &header(&["set", "x", "y", "density"]),
                &density_rows(&sets, 64),
            )?;
        }
        trainer.params().save(dir.join("generator.bin"))?;
    }
    Ok(result)
}

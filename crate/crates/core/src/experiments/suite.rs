//! Property suite for the drift field and the gradient code, run by the
//! `drift-eval` task.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ExperimentConfig;
use super::output::{header, write_csv};
use crate::drift::{drift_decomposed, drift_unified, LatentBatch, SetRole};
use crate::encoder::{Encoder, EncoderSpec, LatentStack};
use crate::error::Result;
use crate::generator::{Activation, GeneratorConfig, GeneratorParams};

const TEMPERATURES: [f64; 3] = [0.1, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
}

impl PropertyCheck {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<PropertyCheck>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(PropertyCheck::passed)
    }

    pub fn check(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One `PASS`/`FAIL` line per property.
    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                let tag = if c.passed() { "PASS" } else { "FAIL" };
                format!("{tag} {:<24} max deviation {:.3e} (tolerance {:.1e})", c.name, c.max_deviation, c.tolerance)
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .checks
            .iter()
            .map(|c| vec![c.name.to_string(), c.max_deviation.to_string(), c.tolerance.to_string(), c.passed().to_string()])
            .collect();
        write_csv(&dir.join("suite.csv"), &header(&["property", "max_deviation", "tolerance", "passed"]), &rows)
    }

    pub fn summary(&self) -> serde_json::Value {
        let checks: serde_json::Map<String, serde_json::Value> =
            self.checks.iter().map(|c| (c.name.to_string(), serde_json::json!(c.max_deviation))).collect();
        serde_json::json!({ "task": "drift-eval", "passed": self.passed(), "max_deviation": checks })
    }
}

fn batch<R: Rng>(rng: &mut R, n: usize, d: usize, role: SetRole) -> LatentBatch {
    LatentBatch::new(d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect(), role).expect("n * d values")
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||a - b|| / ||b||`, or the absolute difference when `b` is zero.
fn relative(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(b);
    if scale == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

struct Instance {
    query: Vec<f64>,
    pos: LatentBatch,
    neg: LatentBatch,
    tau: f64,
}

fn instance<R: Rng>(rng: &mut R) -> Instance {
    let d = rng.gen_range(2..=16);
    let (np, nq) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
    let tau = TEMPERATURES[rng.gen_range(0..TEMPERATURES.len())];
    let query = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    Instance { query, pos: batch(rng, np, d, SetRole::Positive), neg: batch(rng, nq, d, SetRole::Negative), tau }
}

fn shifted(b: &LatentBatch, shift: &[f64], scale: f64) -> LatentBatch {
    let d = b.dim();
    let data = b.as_slice().iter().enumerate().map(|(i, v)| scale * v + shift[i % d]).collect();
    LatentBatch::new(d, data, b.role()).expect("same shape")
}

/// Relative error of analytic against central-difference gradients over
/// every parameter of a random generator, objective `<w, f(x)>`.
fn generator_gradient_error<R: Rng>(rng: &mut R, activation: Activation) -> Result<f64> {
    let (d, rows) = (rng.gen_range(2..=5), 3);
    let hidden = vec![rng.gen_range(3..=6), rng.gen_range(3..=6)];
    let cfg = GeneratorConfig { activation, zero_final: false, ..GeneratorConfig::direct(d, hidden) };
    let mut params = GeneratorParams::new(cfg, rng)?;
    for layer in params.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    }
    let x = Array2::from_shape_fn((rows, d), |_| rng.sample(StandardNormal));
    let eps = Array2::from_shape_fn((rows, d), |_| rng.sample(StandardNormal));
    let w = Array2::from_shape_fn((rows, d), |_| rng.sample(StandardNormal));
    let sigma = vec![0.05; rows];
    let objective = |p: &GeneratorParams| -> Result<f64> {
        let (y, _) = p.forward_direct_batch(x.view(), &sigma, eps.view())?;
        Ok((&y * &w).sum())
    };
    let (_, tape) = params.forward_direct_batch(x.view(), &sigma, eps.view())?;
    let analytic = params.backward(&tape, w.view())?.flatten();
    let h = 1e-5;
    let mut numeric = Vec::with_capacity(analytic.len());
    let n_layers = params.layers().len();
    for l in 0..n_layers {
        let (nw, nb) = (params.layers()[l].weight.len(), params.layers()[l].bias.len());
        for k in 0..nw + nb {
            let bump = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                let layer = &mut p.layers_mut()[l];
                if k < nw {
                    *layer.weight.iter_mut().nth(k).unwrap() += delta;
                } else {
                    layer.bias[k - nw] += delta;
                }
                objective(&p)
            };
            numeric.push((bump(h)? - bump(-h)?) / (2.0 * h));
        }
    }
    Ok(relative(&analytic, &numeric))
}

fn encoder_gradient_error<R: Rng>(rng: &mut R) -> Result<f64> {
    let spec = EncoderSpec {
        layer_dims: vec![6, 5, 4],
        taps: vec![0, 2],
        seed: rng.gen(),
        frame_len: 16,
        frame_hop: 8,
        ..EncoderSpec::default()
    };
    let enc = Encoder::new(spec)?;
    let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let stack = enc.encode_samples(&x)?;
    let upstream = LatentStack::new(
        stack.layers().iter().map(|l| batch(rng, l.len(), l.dim(), SetRole::Query)).collect(),
    )?;
    let (_, cache) = enc.encode_with_cache(&x)?;
    let analytic = enc.backward(&cache, &upstream)?;
    let objective = |x: &[f64]| -> Result<f64> {
        let s = enc.encode_samples(x)?;
        Ok(s.layers()
            .iter()
            .zip(upstream.layers())
            .map(|(a, u)| a.as_slice().iter().zip(u.as_slice()).map(|(p, q)| p * q).sum::<f64>())
            .sum())
    };
    let h = 1e-5;
    let numeric = (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            let mut m = x.clone();
            p[i] += h;
            m[i] -= h;
            Ok((objective(&p)? - objective(&m)?) / (2.0 * h))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(relative(&analytic, &numeric))
}

/// Runs every property on `cfg.suite.instances` random instances.
pub fn run_drift_eval(cfg: &ExperimentConfig, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perturb = if cfg.suite.perturb { 1e-6 } else { 0.0 };
    let mut oracle = 0.0f64;
    let mut antisymmetry = 0.0f64;
    let mut equilibrium = 0.0f64;
    let mut translation = 0.0f64;
    let mut scaling = 0.0f64;
    for _ in 0..cfg.suite.instances {
        let inst = instance(&mut rng);
        let (q, p, n, tau) = (&inst.query, &inst.pos, &inst.neg, inst.tau);
        let unified = drift_unified(q, p, n, tau)?;
        let mut reference = drift_decomposed(q, p, n, tau)?.total;
        reference.iter_mut().for_each(|v| *v *= 1.0 + perturb);
        oracle = oracle.max(relative(&unified, &reference));

        let swapped = drift_unified(q, n, p, tau)?;
        let negated: Vec<f64> = swapped.iter().map(|v| -v).collect();
        antisymmetry = antisymmetry.max(relative(&unified, &negated));

        // The same multiset in a different order on each side.
        let mut rows: Vec<Vec<f64>> = p.points().map(<[f64]>::to_vec).collect();
        let forward = LatentBatch::from_points(&rows, SetRole::Positive)?;
        rows.reverse();
        let backward = LatentBatch::from_points(&rows, SetRole::Negative)?;
        equilibrium = equilibrium.max(norm(&drift_unified(q, &forward, &backward, tau)?));

        let shift: Vec<f64> = (0..q.len()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let q_shift: Vec<f64> = q.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let moved = drift_unified(&q_shift, &shifted(p, &shift, 1.0), &shifted(n, &shift, 1.0), tau)?;
        translation = translation.max(relative(&moved, &unified));

        let s = rng.gen_range(0.5..2.0);
        let zero = vec![0.0; q.len()];
        let q_scaled: Vec<f64> = q.iter().map(|v| s * v).collect();
        let scaled = drift_unified(&q_scaled, &shifted(p, &zero, s), &shifted(n, &zero, s), s * tau)?;
        let expected: Vec<f64> = unified.iter().map(|v| s * v).collect();
        scaling = scaling.max(relative(&scaled, &expected));
    }
    let mut gen_grad = 0.0f64;
    let mut enc_grad = 0.0f64;
    for i in 0..20 {
        let act = if i % 2 == 0 { Activation::Tanh } else { Activation::Silu };
        gen_grad = gen_grad.max(generator_gradient_error(&mut rng, act)?);
        enc_grad = enc_grad.max(encoder_gradient_error(&mut rng)?);
    }
    let check = |name, max_deviation, tolerance| PropertyCheck { name, max_deviation, tolerance };
    Ok(SuiteReport {
        checks: vec![
            check("unified_vs_decomposed", oracle, 1e-10),
            check("antisymmetry", antisymmetry, 1e-12),
            check("equilibrium_zero", equilibrium, 0.0),
            check("translation", translation, 1e-9),
            check("scaling", scaling, 1e-9),
            check("generator_gradient", gen_grad, 1e-4),
            check("encoder_gradient", enc_grad, 1e-4),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::Task;

    #[test]
    fn suite_passes_and_negative_control_fails() {
        let mut cfg = ExperimentConfig::new(Task::DriftEval);
        cfg.suite.instances = 50;
        let report = run_drift_eval(&cfg, 1).unwrap();
        assert!(report.passed(), "{:#?}", report.lines());
        assert!(report.check("unified_vs_decomposed").unwrap().max_deviation < 1e-10);
        cfg.suite.perturb = true;
        let bad = run_drift_eval(&cfg, 1).unwrap();
        assert!(!bad.passed());
        assert!(!bad.check("unified_vs_decomposed").unwrap().passed());
    }
}

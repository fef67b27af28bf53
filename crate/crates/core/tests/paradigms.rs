use drifting::encoder::{Encoder, EncoderSpec};
use drifting::generator::{GeneratorConfig, GeneratorParams};
use drifting::signal::{mix_at_snr, synth_clean, synth_noise, CleanKind, Compression, NoiseKind, StftConfig};
use drifting::trainer::{enhance, Batch, SigmaMode, SpectralPath, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LEN: usize = 2400;

fn batch(n: usize) -> Batch {
    let clean: Vec<Vec<f64>> = (0..n).map(|i| synth_clean(i as u64, LEN, CleanKind::Harmonic).unwrap().into_samples()).collect();
    let noisy = clean
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let c = drifting::signal::Waveform::from_samples(c.clone()).unwrap();
            let n = synth_noise(100 + i as u64, LEN, NoiseKind::ALL[i % 3]).unwrap();
            mix_at_snr(&c, &n, 0.0).unwrap().into_samples()
        })
        .collect();
    Batch { ids: (0..n).collect(), noisy, clean }
}

fn trained(cfg: GeneratorConfig) -> Trainer<SpectralPath> {
    let path = SpectralPath::new(StftConfig::default(), Compression::default()).unwrap();
    let params = GeneratorParams::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let encoder = Encoder::new(EncoderSpec::default()).unwrap();
    let tc = TrainConfig { batch_size: 4, sigma: SigmaMode::Fixed(0.0), seed: 5, ..TrainConfig::default() };
    let mut t = Trainer::new(tc, params, encoder, path).unwrap();
    let b = batch(4);
    for _ in 0..3 {
        t.train_step(&b).unwrap();
    }
    t
}

#[test]
fn zero_sigma_inference_is_bit_deterministic() {
    let t = trained(GeneratorConfig::direct(512, vec![32, 32]));
    let b = batch(2);
    for trial in 0..50u64 {
        let x = &b.noisy[(trial % 2) as usize];
        let a = t.enhance(x, 0.0, &mut ChaCha8Rng::seed_from_u64(trial)).unwrap();
        let c = t.enhance(x, 0.0, &mut ChaCha8Rng::seed_from_u64(trial + 1000)).unwrap();
        assert!(a.iter().zip(&c).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn conditional_inference_varies_with_eps() {
    let t = trained(GeneratorConfig::conditional(512, vec![32, 32]));
    let b = batch(2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..50 {
        let x = &b.noisy[trial % 2];
        let a = enhance(t.params(), t.path(), x, 0.0, &mut rng).unwrap();
        let c = enhance(t.params(), t.path(), x, 0.0, &mut rng).unwrap();
        let diff: f64 = a.iter().zip(&c).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(diff > 0.0, "trial {trial}");
    }
}

#[test]
fn untrained_direct_generator_is_identity() {
    let path = SpectralPath::new(StftConfig::default(), Compression::default()).unwrap();
    let params = GeneratorParams::new(GeneratorConfig::direct(512, vec![16]), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = batch(1);
    let out = enhance(&params, &path, &b.noisy[0], 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let err = out.iter().zip(&b.noisy[0]).fold(0.0f64, |m, (a, x)| m.max((a - x).abs()));
    assert!(err < 1e-10);
}

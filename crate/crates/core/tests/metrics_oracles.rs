use drifting::drift::{drift_multi_temperature, KernelConfig, LatentBatch, SetRole};
use drifting::metrics::{mmd2, pca2_fit, pca2_project, si_sdr_with};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, d: usize, seed: u64) -> LatentBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    LatentBatch::new(d, data, SetRole::Query).unwrap()
}

#[test]
fn isotropic_gaussian_has_balanced_leading_eigenvalues() {
    for seed in 0..5 {
        let pca = pca2_fit(&gaussian(2000, 6, seed)).unwrap();
        let [l1, l2] = pca.eigenvalues;
        assert!(l1 >= l2 && l2 > 0.0);
        assert!((l1 - l2) / l1 < 0.2, "eigenvalues {l1} {l2}");
    }
}

#[test]
fn leading_axis_of_stretched_cloud_is_found() {
    let base = gaussian(2000, 4, 11);
    let data: Vec<f64> = base.points().flat_map(|p| [p[0], 5.0 * p[1], p[2], 0.5 * p[3]]).collect();
    let pca = pca2_fit(&LatentBatch::new(4, data, SetRole::Query).unwrap()).unwrap();
    assert!(pca.components[0][1].abs() > 0.999);
    let orth: f64 = pca.components[0].iter().zip(&pca.components[1]).map(|(a, b)| a * b).sum();
    assert!(orth.abs() < 1e-9);
    let proj = pca2_project(&LatentBatch::new(4, base.into_vec(), SetRole::Query).unwrap()).unwrap();
    assert!(proj.centroid.iter().all(|c| c.abs() < 1e-12));
}

#[test]
fn orthogonal_noise_gives_ten_db() {
    let n = 1000;
    let s: Vec<f64> = (0..n).map(|i| (i as f64 * 0.05).sin()).collect();
    // Gram-Schmidt a cosine against the sine so the two are exactly orthogonal.
    let raw: Vec<f64> = (0..n).map(|i| (i as f64 * 0.31).cos()).collect();
    let proj = raw.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / s.iter().map(|v| v * v).sum::<f64>();
    let mut noise: Vec<f64> = raw.iter().zip(&s).map(|(a, b)| a - proj * b).collect();
    let scale = (s.iter().map(|v| v * v).sum::<f64>() / 10.0 / noise.iter().map(|v| v * v).sum::<f64>()).sqrt();
    noise.iter_mut().for_each(|v| *v *= scale);
    let est: Vec<f64> = s.iter().zip(&noise).map(|(a, b)| a + b).collect();
    assert!((si_sdr_with(&est, &s, false).unwrap() - 10.0).abs() < 1e-9);
}

#[test]
fn equal_sets_have_zero_mmd_and_zero_drift() {
    let a = gaussian(40, 3, 5);
    assert_eq!(mmd2(&a, &a, 0.5).unwrap(), 0.0);
    let pos = a.clone().with_role(SetRole::Positive);
    let neg = a.clone().with_role(SetRole::Negative);
    let field = drift_multi_temperature(&a, &pos, &neg, &KernelConfig::new(vec![0.1, 0.5, 1.0]).unwrap()).unwrap();
    assert!(field.vectors().iter().all(|&v| v == 0.0));
    let b = gaussian(40, 3, 6);
    assert!(mmd2(&a, &b, 0.5).unwrap() > 0.0);
}

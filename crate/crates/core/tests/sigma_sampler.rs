use drifting::generator::{sample_sigma, NoiseSchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn acceptance_oracle(s: &NoiseSchedule) -> f64 {
    let n = Normal::new(s.mu, s.sigma_log).unwrap();
    n.cdf(s.hi.ln()) - n.cdf(s.lo.ln())
}

#[test]
fn draws_stay_in_range() {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let draws: Vec<f64> = (0..100_000).map(|_| sample_sigma(&s, &mut rng).unwrap()).collect();
    assert!(draws.iter().all(|&x| (0.01..=0.3).contains(&x)));
    // Sanity on the shape: the truncated median sits close to exp(mu).
    let below = draws.iter().filter(|&&x| x < (-3.0f64).exp()).count() as f64 / draws.len() as f64;
    assert!((0.4..0.6).contains(&below), "fraction below exp(mu) = {below}");
}

#[test]
fn acceptance_rate_matches_normal_cdf() {
    let s = NoiseSchedule::default();
    let expected = acceptance_oracle(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 1_000_000;
    let hits = (0..n).filter(|_| s.accepts(s.propose(&mut rng))).count();
    let rate = hits as f64 / n as f64;
    assert!((rate - expected).abs() < 0.01 * expected, "rate {rate} vs oracle {expected}");
}

#[test]
fn zero_spread_is_a_point_mass() {
    let s = NoiseSchedule { sigma_log: 0.0, ..NoiseSchedule::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        assert_eq!(sample_sigma(&s, &mut rng).unwrap(), (-3.0f64).exp());
    }
}

use drifting::drift::{
    drift_decomposed, drift_multi_temperature, drift_unified, KernelConfig, LatentBatch, SetRole,
};
use proptest::prelude::*;

fn batch(dim: usize, data: Vec<f64>, role: SetRole) -> LatentBatch {
    LatentBatch::new(dim, data, role).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Query, positives and negatives in a shared dimension, plus a temperature.
fn instance() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (2usize..9, 1usize..12, 1usize..12, prop::sample::select(vec![0.1, 0.5, 1.0])).prop_flat_map(|(d, np, nn, tau)| {
        (
            Just(d),
            prop::collection::vec(-2.0f64..2.0, d),
            prop::collection::vec(-2.0f64..2.0, d * np),
            prop::collection::vec(-2.0f64..2.0, d * nn),
            Just(tau),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn unified_agrees_with_decomposed((d, q, p, n, tau) in instance()) {
        let pos = batch(d, p, SetRole::Positive);
        let neg = batch(d, n, SetRole::Negative);
        let u = drift_unified(&q, &pos, &neg, tau).unwrap();
        let r = drift_decomposed(&q, &pos, &neg, tau).unwrap().total;
        let scale = max_abs(&r).max(1e-300);
        let dev = u.iter().zip(&r).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        prop_assert!(dev < 1e-10 || max_abs(&r) < 1e-12, "deviation {}", dev);
    }

    #[test]
    fn swapping_sets_negates((d, q, p, n, tau) in instance()) {
        let pos = batch(d, p, SetRole::Positive);
        let neg = batch(d, n, SetRole::Negative);
        let a = drift_unified(&q, &pos, &neg, tau).unwrap();
        let b = drift_unified(&q, &neg, &pos, tau).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x + y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn translation_leaves_drift_unchanged((d, q, p, n, tau) in instance(), shift in -5.0f64..5.0) {
        let base = drift_unified(&q, &batch(d, p.clone(), SetRole::Positive), &batch(d, n.clone(), SetRole::Negative), tau).unwrap();
        let mv = |v: &[f64]| v.iter().enumerate().map(|(i, x)| x + shift * (1.0 + (i % d) as f64)).collect::<Vec<_>>();
        let moved = drift_unified(&mv(&q), &batch(d, mv(&p), SetRole::Positive), &batch(d, mv(&n), SetRole::Negative), tau).unwrap();
        for (x, y) in base.iter().zip(&moved) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn joint_scaling_scales_drift((d, q, p, n, tau) in instance(), s in 0.1f64..10.0) {
        let base = drift_unified(&q, &batch(d, p.clone(), SetRole::Positive), &batch(d, n.clone(), SetRole::Negative), tau).unwrap();
        let sc = |v: &[f64]| v.iter().map(|x| x * s).collect::<Vec<_>>();
        let scaled = drift_unified(&sc(&q), &batch(d, sc(&p), SetRole::Positive), &batch(d, sc(&n), SetRole::Negative), tau * s).unwrap();
        for (x, y) in base.iter().zip(&scaled) {
            prop_assert!((s * x - y).abs() <= 1e-9 * (1.0 + (s * x).abs()));
        }
    }

    #[test]
    fn equal_sets_give_exact_zero((d, q, p, _n, tau) in instance()) {
        let pos = batch(d, p.clone(), SetRole::Positive);
        let neg = batch(d, p, SetRole::Negative);
        let v = drift_unified(&q, &pos, &neg, tau).unwrap();
        prop_assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn equal_multisets_in_other_order_give_exact_zero((d, q, p, _n, tau) in instance()) {
        let rows: Vec<&[f64]> = p.chunks(d).rev().collect();
        let reversed: Vec<f64> = rows.concat();
        let v = drift_unified(&q, &batch(d, p, SetRole::Positive), &batch(d, reversed, SetRole::Negative), tau).unwrap();
        prop_assert!(v.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn multi_temperature_is_mean_of_single_fields() {
    let d = 3;
    let q: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
    let p: Vec<f64> = (0..15).map(|i| (i as f64 * 1.3).cos()).collect();
    let n: Vec<f64> = (0..9).map(|i| (i as f64 * 0.4).sin() * 1.5).collect();
    let (qs, pos, neg) = (batch(d, q.clone(), SetRole::Query), batch(d, p, SetRole::Positive), batch(d, n, SetRole::Negative));
    let temps = [0.1, 0.5, 1.0];
    let field = drift_multi_temperature(&qs, &pos, &neg, &KernelConfig::new(temps.to_vec()).unwrap()).unwrap();
    for (i, qrow) in q.chunks(d).enumerate() {
        let mut mean = vec![0.0; d];
        for &t in &temps {
            let v = drift_unified(qrow, &pos, &neg, t).unwrap();
            mean.iter_mut().zip(&v).for_each(|(m, x)| *m += x / temps.len() as f64);
        }
        for (a, b) in field.vector(i).iter().zip(&mean) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }
}

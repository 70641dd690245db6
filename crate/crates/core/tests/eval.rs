mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sysforecast::eval::{
    baseline_persistence, chrono_split, make_samples, rmse, sample_count, EvalError, Split,
};

/// Straight-line RMSE used as the reference.
fn brute_rmse(p: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut k = 0;
    while k < p.len() {
        let d = p[k] - y[k];
        acc += d * d;
        k += 1;
    }
    (acc / p.len() as f64).sqrt()
}

#[test]
fn rmse_matches_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        assert!((rmse(&p, &y).unwrap() - brute_rmse(&p, &y)).abs() <= 1e-12);
    }
    assert!(matches!(rmse(&[], &[]), Err(EvalError::EmptyInput)));
    assert!(matches!(
        rmse(&[1.0], &[]),
        Err(EvalError::LengthMismatch(1, 0))
    ));
}

#[test]
fn sample_counts_match_closed_form_exhaustively() {
    for t in 0..=20usize {
        let features: Vec<Vec<f64>> = (0..t).map(|k| vec![k as f64]).collect();
        let cpu: Vec<f64> = (0..t).map(|k| k as f64 * 10.0).collect();
        for h in 1..=8usize {
            for i in 1..=8usize {
                let expected = if t + 1 >= h + i { t + 1 - h - i } else { 0 };
                let samples = make_samples(&features, &cpu, h, i);
                assert_eq!(samples.len(), expected, "T={t} h={h} i={i}");
                assert_eq!(sample_count(t, h, i), expected);
                for (s, smp) in samples.iter().enumerate() {
                    let last = s + h - 1;
                    assert_eq!(smp.inputs.len(), h);
                    assert_eq!(smp.inputs[0][0], s as f64);
                    assert_eq!(smp.inputs[h - 1][0], last as f64);
                    assert_eq!(smp.target, (last + i) as f64 * 10.0);
                }
            }
        }
    }
}

// Frozen from an independent recomputation over the synthetic seed-1
// utilization series.
const PERSISTENCE_ALL_H1_I1: f64 = 0.17420972352677966;
const PERSISTENCE_ALL_H10_I1: f64 = 0.1736393475920761;
const PERSISTENCE_TEST_H10_I1: f64 = 0.15942777424590943;

#[test]
fn persistence_matches_frozen_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let settings = sysforecast::pipeline::Settings::default();
    let (trace, windows) = common::synthetic_windows(&settings.synth_config(), dir.path());
    let cpu: Vec<f64> = windows.iter().map(|w| w.cpu_util).collect();
    assert_eq!(cpu.len(), 2000);
    assert!(
        (baseline_persistence(&trace.cpu_util, 1, 1).unwrap() - PERSISTENCE_ALL_H1_I1).abs() < 1e-9
    );
    assert!((baseline_persistence(&cpu, 1, 1).unwrap() - PERSISTENCE_ALL_H1_I1).abs() < 1e-9);
    assert!((baseline_persistence(&cpu, 10, 1).unwrap() - PERSISTENCE_ALL_H10_I1).abs() < 1e-9);
    let split = Split::new(cpu.len(), 0.8).unwrap();
    assert_eq!(split.test, 1600..2000);
    let test = &cpu[split.test.clone()];
    assert!((baseline_persistence(test, 10, 1).unwrap() - PERSISTENCE_TEST_H10_I1).abs() < 1e-9);
}

#[test]
fn degenerate_split_names_the_cell() {
    let err = chrono_split(20, 0.8, 3, 2).unwrap_err();
    match &err {
        EvalError::DegenerateSplit {
            history,
            horizon,
            test_samples,
            ..
        } => {
            assert_eq!((*history, *horizon, *test_samples), (3, 2, 0));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("history=3, horizon=2"), "{err}");
    assert!(chrono_split(20, 0.8, 2, 2).is_ok());
    assert!(matches!(
        Split::new(10, 1.0),
        Err(EvalError::BadFraction(_))
    ));
}

proptest! {
    #[test]
    fn no_sample_crosses_the_split(
        len in 2usize..300,
        frac in 0.05f64..0.95,
        h in 1usize..12,
        i in 1usize..12,
    ) {
        // Tag every window with its index so provenance is visible.
        let features: Vec<Vec<f64>> = (0..len).map(|k| vec![k as f64]).collect();
        let cpu: Vec<f64> = (0..len).map(|k| k as f64).collect();
        let split = Split::new(len, frac).unwrap();
        prop_assert_eq!(split.train.end, split.test.start);
        for range in [split.train.clone(), split.test.clone()] {
            let samples = make_samples(&features[range.clone()], &cpu[range.clone()], h, i);
            for s in samples {
                for row in &s.inputs {
                    prop_assert!(range.contains(&(row[0] as usize)));
                }
                prop_assert!(range.contains(&(s.target as usize)));
            }
        }
    }

    #[test]
    fn rmse_is_permutation_invariant(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..100),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (ps, ys): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        let a = rmse(&p, &y).unwrap();
        let b = rmse(&ps, &ys).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert!(a >= 0.0);
    }
}

mod common;

use common::rng;
use proptest::prelude::*;
use pseudolab::gmm::{
    adaptive_threshold, em_fit, posterior_positive, threshold_for_scores, EmConfig, GmmFit, ScoreBank,
    ThresholdConfig, ThresholdRule, ThresholdSource,
};
use pseudolab::Error;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

fn mixture(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let lo = Normal::new(0.2, 0.05).unwrap();
    let hi = Normal::new(0.8, 0.05).unwrap();
    (0..n)
        .map(|i| if i % 2 == 0 { lo.sample(&mut r) } else { hi.sample(&mut r) })
        .collect()
}

fn two_point() -> Vec<f64> {
    let mut v = vec![0.1; 100];
    v.extend(vec![0.9; 100]);
    v
}

fn non_decreasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
}

#[test]
fn recovers_separated_components() {
    let fit = em_fit(&mixture(1, 500), &EmConfig::default()).unwrap();
    assert!((fit.mu_n - 0.2).abs() < 0.02 && (fit.mu_p - 0.8).abs() < 0.02);
    assert!((fit.w_n - 0.5).abs() < 0.05 && (fit.w_p - 0.5).abs() < 0.05);
    assert!(non_decreasing(&fit.ll_trace));
    assert_eq!(fit.ll_trace.len(), fit.iterations + 1);
}

#[test]
fn log_likelihood_never_decreases() {
    let mut r = rng(2);
    for seed in 0..40 {
        let mut xs = mixture(seed, 300);
        // skewed and overlapping variants
        let noise = Normal::new(0.5f64, 0.2).unwrap();
        xs.extend((0..(seed as usize * 7)).map(|_| noise.sample(&mut r).clamp(0.0, 1.0)));
        let fit = em_fit(&xs, &EmConfig::default()).unwrap();
        assert!(non_decreasing(&fit.ll_trace), "seed {seed}: {:?}", fit.ll_trace);
    }
}

#[test]
fn two_point_mass() {
    let fit = em_fit(&two_point(), &EmConfig::default()).unwrap();
    assert!((fit.mu_n - 0.1).abs() < 1e-9 && (fit.mu_p - 0.9).abs() < 1e-9);
    assert_eq!(fit.var_n, 1e-4);
    assert_eq!(fit.var_p, 1e-4);
    assert!((fit.w_n - 0.5).abs() < 1e-9 && (fit.w_p - 0.5).abs() < 1e-9);
}

#[test]
fn label_swap_symmetry() {
    let a = em_fit(&two_point(), &EmConfig::default()).unwrap();
    let mirrored: Vec<f64> = two_point().iter().map(|s| 1.0 - s).collect();
    let b = em_fit(&mirrored, &EmConfig::default()).unwrap();
    assert!((b.mu_n - (1.0 - a.mu_p)).abs() < 1e-6);
    assert!((b.mu_p - (1.0 - a.mu_n)).abs() < 1e-6);

    let xs = mixture(5, 400);
    let a = em_fit(&xs, &EmConfig::default()).unwrap();
    let b = em_fit(&xs.iter().map(|s| 1.0 - s).collect::<Vec<_>>(), &EmConfig::default()).unwrap();
    assert!((b.mu_n - (1.0 - a.mu_p)).abs() < 1e-6);
    assert!((b.mu_p - (1.0 - a.mu_n)).abs() < 1e-6);
}

#[test]
fn degenerate_samples() {
    assert!(matches!(em_fit(&[0.3; 10], &EmConfig::default()), Err(Error::Degenerate(_))));
    assert!(matches!(em_fit(&[], &EmConfig::default()), Err(Error::Degenerate(_))));
    assert!(matches!(em_fit(&[0.5], &EmConfig::default()), Err(Error::Degenerate(_))));
    assert!(em_fit(&[0.1, f64::NAN], &EmConfig::default()).is_err());
}

fn symmetric_fit(mu_n: f64, mu_p: f64, var: f64) -> GmmFit {
    GmmFit {
        w_n: 0.5,
        w_p: 0.5,
        mu_n,
        mu_p,
        var_n: var,
        var_p: var,
        iterations: 0,
        log_likelihood: 0.0,
        ll_trace: vec![],
    }
}

#[test]
fn posterior_examples() {
    let f = symmetric_fit(0.2, 0.8, 0.0025);
    assert!(posterior_positive(&f, 0.8) > 0.99);
    assert!(posterior_positive(&f, 0.2) < 0.01);
    assert!((posterior_positive(&f, 0.5) - 0.5).abs() < 1e-12);
}

#[test]
fn posterior_monotone_for_equal_variances() {
    let f = symmetric_fit(0.3, 0.6, 0.01);
    let mut prev = 0.0;
    for k in 0..=100 {
        let v = posterior_positive(&f, k as f64 / 100.0);
        assert!(v >= prev);
        prev = v;
    }
}

#[test]
fn argmax_threshold_matches_posterior_scan() {
    let xs = mixture(9, 500);
    let fit = em_fit(&xs, &EmConfig::default()).unwrap();
    let d = adaptive_threshold(&fit, &xs, 0.4, ThresholdRule::Argmax);
    assert_eq!(d.source, ThresholdSource::Gmm);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for &s in &xs {
        let p = posterior_positive(&fit, s);
        if p > best.0 || (p == best.0 && s < best.1) {
            best = (p, s);
        }
    }
    assert_eq!(d.tau, best.1);
    if (fit.var_n - fit.var_p).abs() < 1e-12 {
        assert_eq!(d.tau, xs.iter().cloned().fold(f64::MIN, f64::max));
    }
}

#[test]
fn crossing_threshold_is_lowest_confident_sample() {
    let xs = mixture(10, 500);
    let fit = em_fit(&xs, &EmConfig::default()).unwrap();
    let d = adaptive_threshold(&fit, &xs, 0.4, ThresholdRule::Crossing);
    assert!(posterior_positive(&fit, d.tau) >= 0.5);
    // every sample between tau and the argmax keeps posterior >= 0.5, and the
    // next sample below tau drops under it
    let am = adaptive_threshold(&fit, &xs, 0.4, ThresholdRule::Argmax).tau;
    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    for &s in sorted.iter().filter(|&&s| s >= d.tau && s <= am) {
        assert!(posterior_positive(&fit, s) >= 0.5);
    }
    if let Some(&below) = sorted.iter().rev().find(|&&s| s < d.tau) {
        assert!(posterior_positive(&fit, below) < 0.5);
    }
    assert!(d.tau > 0.3 && d.tau < 0.7);
}

#[test]
fn threshold_examples() {
    let cfg = ThresholdConfig::default();
    let d = threshold_for_scores(&[0.5; 20], &cfg).unwrap();
    assert_eq!((d.tau, d.source), (0.4, ThresholdSource::Fallback));
    let d = threshold_for_scores(&two_point(), &cfg).unwrap();
    assert_eq!((d.tau, d.source), (0.9, ThresholdSource::Gmm));
    let d = threshold_for_scores(&[], &cfg).unwrap();
    assert_eq!(d.source, ThresholdSource::Fallback);
}

#[test]
fn lopsided_fit_falls_back() {
    let fit = GmmFit { w_n: 0.995, w_p: 0.005, ..symmetric_fit(0.2, 0.8, 0.01) };
    let d = adaptive_threshold(&fit, &[0.2, 0.8], 0.4, ThresholdRule::Argmax);
    assert_eq!((d.tau, d.source), (0.4, ThresholdSource::Fallback));
}

#[test]
fn bank_examples() {
    let mut b = ScoreBank::new(200);
    assert_eq!(b.push(0, &[0.9, 0.8, 0.1, 0.1]).unwrap(), 2);
    assert_eq!(b.scores(0), vec![0.9, 0.8]);
    assert_eq!(b.push(1, &[0.0, 0.0]).unwrap(), 0);
    assert_eq!(b.len(1), 0);
    let mut b = ScoreBank::new(200);
    for _ in 0..250 {
        b.push(2, &[1.0]).unwrap();
    }
    assert_eq!(b.len(2), 200);
    let mut b = ScoreBank::new(3);
    b.push(0, &[1.0, 1.0]).unwrap();
    b.push(0, &[0.9, 0.8, 0.7, 0.6]).unwrap();
    assert_eq!(b.scores(0), vec![0.9, 0.8, 0.7]);
    assert!(b.push(0, &[1.5]).is_err());
}

proptest! {
    #[test]
    fn fit_ignores_sample_order(seed in 0u64..1000) {
        let xs = mixture(seed, 120);
        let mut ys = xs.clone();
        ys.shuffle(&mut rng(seed ^ 0xabc));
        prop_assert_eq!(em_fit(&xs, &EmConfig::default()).unwrap(), em_fit(&ys, &EmConfig::default()).unwrap());
    }

    #[test]
    fn tau_is_a_sample_or_the_fallback(xs in prop::collection::vec(0.0..=1.0f64, 0..60), crossing in any::<bool>()) {
        let cfg = ThresholdConfig {
            rule: if crossing { ThresholdRule::Crossing } else { ThresholdRule::Argmax },
            ..ThresholdConfig::default()
        };
        let d = threshold_for_scores(&xs, &cfg).unwrap();
        match d.source {
            ThresholdSource::Gmm => prop_assert!(xs.contains(&d.tau)),
            ThresholdSource::Fallback => prop_assert_eq!(d.tau, 0.4),
        }
    }
}

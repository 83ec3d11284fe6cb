use proptest::prelude::*;

use sheetbond_core::verify::{Merge, WeightedStats};
use sheetbond_core::{refinement_order, weighted_moments, Error, PathStream};

fn normals(seed: u64, n: u64) -> Vec<f64> {
    let mut s = PathStream::new(seed, 0);
    (0..n).map(|_| s.standard_normal()).collect()
}

#[test]
fn standard_error_shrinks_by_root_two() {
    let x = normals(301, 80_000);
    let se = |n: usize| weighted_moments(&x[..n], &vec![1.0; n]).unwrap().std_error;
    let ratio = se(20_000) / se(40_000);
    assert!((ratio / 2f64.sqrt() - 1.0).abs() <= 0.1, "{ratio}");
    let ratio = se(40_000) / se(80_000);
    assert!((ratio / 2f64.sqrt() - 1.0).abs() <= 0.1, "{ratio}");
}

#[test]
fn textbook_moments() {
    let e = weighted_moments(&[5.0; 10], &[1.0; 10]).unwrap();
    assert_eq!((e.mean, e.std_error), (5.0, 0.0));
    let values: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
    let e = weighted_moments(&values, &[1.0; 1000]).unwrap();
    assert!((e.mean - 0.5).abs() < 1e-15);
    assert!((e.std_error - 0.5 / 1000f64.sqrt()).abs() < 1e-12);
    assert!(matches!(
        weighted_moments(&[1.0, 2.0], &[0.0, 0.0]),
        Err(Error::ZeroWeights)
    ));
    assert!(weighted_moments(&[1.0, 2.0], &[1.0, -1.0]).is_err());
    assert!(weighted_moments(&[1.0], &[1.0, 1.0]).is_err());
}

#[test]
fn refinement_orders() {
    let halving: Vec<(f64, f64)> = (0..4).map(|k| (2f64.powi(k), 0.5f64.powi(k))).collect();
    assert!((refinement_order(&halving).unwrap().order - 1.0).abs() < 1e-12);
    let quartering: Vec<(f64, f64)> = (0..4).map(|k| (2f64.powi(k), 0.25f64.powi(k))).collect();
    assert!((refinement_order(&quartering).unwrap().order - 2.0).abs() < 1e-12);
    let with_zero = [
        (1.0, 1.0),
        (2.0, 0.5),
        (4.0, 0.0),
        (8.0, 0.125),
        (16.0, 0.0625),
    ];
    let study = refinement_order(&with_zero).unwrap();
    assert_eq!(study.excluded, vec![(4.0, 0.0)]);
    assert!(study.note.is_some());
    assert!(matches!(
        refinement_order(&with_zero[..3]),
        Err(Error::TooFewLevels(2))
    ));
}

#[test]
fn dominant_weight_does_not_cancel_the_error() {
    let data = [
        (0.0, 0.0),
        (19.421680461276498, -3.56809053450791),
        (0.0, 0.0),
        (0.0, 8.330164385648137),
        (0.0, -1.3699786756899586),
    ];
    // Two-pass oracle relative to the largest weight.
    let top = data[1].0;
    let w: Vec<f64> = data.iter().map(|&(lw, _)| f64::exp(lw - top)).collect();
    let sw: f64 = w.iter().sum();
    let mean = data.iter().zip(&w).map(|(&(_, x), w)| w * x).sum::<f64>() / sw;
    let ss: f64 = data
        .iter()
        .zip(&w)
        .map(|(&(_, x), w)| (w * (x - mean)).powi(2))
        .sum();
    let mut stats = WeightedStats::default();
    let mut tail = WeightedStats::default();
    stats.push(data[0].0, data[0].1);
    for &(lw, x) in &data[1..] {
        tail.push(lw, x);
    }
    stats.merge(tail);
    let e = stats.self_normalized_estimate().unwrap();
    assert!((e.mean - mean).abs() <= 1e-14 * mean.abs());
    // Raw power sums lose ~8% here; what remains is rounding in the mean.
    assert!((e.std_error / (ss.sqrt() / sw) - 1.0).abs() <= 1e-7);
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-300)
}

/// Standard errors agree up to rounding on the natural scale `spread² / ess`.
fn close_se(a: f64, b: f64, spread: f64, ess: f64) -> bool {
    (a * a - b * b).abs() <= 1e-10 * (a * a).max(b * b).max(spread * spread / ess)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merging_partitions_matches_single_pass(
        data in prop::collection::vec((-30.0f64..30.0, -10.0f64..10.0), 1..200),
        cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..5),
    ) {
        let mut whole = WeightedStats::default();
        for &(lw, x) in &data {
            whole.push(lw, x);
        }
        let mut bounds: Vec<usize> = cuts.iter().map(|c| c.index(data.len() + 1)).collect();
        bounds.extend([0, data.len()]);
        bounds.sort_unstable();
        let mut parts = bounds.windows(2).map(|w| {
            let mut s = WeightedStats::default();
            for &(lw, x) in &data[w[0]..w[1]] {
                s.push(lw, x);
            }
            s
        });
        let mut merged = parts.next().unwrap();
        for p in parts {
            merged.merge(p);
        }
        prop_assert_eq!(merged.count(), whole.count());
        let x_max = data.iter().map(|d| d.1.abs()).fold(0.0, f64::max);
        let y_max = data.iter().map(|&(lw, x)| lw.exp() * x.abs()).fold(0.0, f64::max);
        let (a, b) = (merged.importance_estimate(), whole.importance_estimate());
        prop_assert!(close(a.mean, b.mean) || (a.mean - b.mean).abs() <= 1e-12 * y_max);
        prop_assert!(close_se(a.std_error, b.std_error, y_max, data.len() as f64));
        prop_assert!(close(a.effective_n, b.effective_n));
        let (a, b) = (merged.self_normalized_estimate().unwrap(), whole.self_normalized_estimate().unwrap());
        prop_assert!(close(a.mean, b.mean) || (a.mean - b.mean).abs() <= 1e-12 * x_max);
        prop_assert!(close_se(a.std_error, b.std_error, x_max, b.effective_n));
    }

    #[test]
    fn effective_n_never_exceeds_n(weights in prop::collection::vec(1e-6f64..1e6, 1..100)) {
        let values = vec![1.0; weights.len()];
        let e = weighted_moments(&values, &weights).unwrap();
        prop_assert!(e.effective_n <= weights.len() as f64 * (1.0 + 1e-12));
        prop_assert!(e.std_error >= 0.0);
    }
}

use proptest::prelude::*;

use sheetbond_core::sheet::SheetSampler;
use sheetbond_core::verify::WeightedStats;
use sheetbond_core::{
    build_field, sample_sheet, sample_sheet_on_warped_grid, Error, FieldKind, GridSpec,
    MaturityWarp, PathStream,
};

/// Unweighted mean of `f(path)` with its standard error.
fn monte_carlo(n: u64, mut f: impl FnMut(u64) -> f64) -> (f64, f64) {
    let mut s = WeightedStats::default();
    for p in 0..n {
        s.push(0.0, f(p));
    }
    let e = s.importance_estimate();
    (e.mean, e.std_error)
}

#[test]
fn sheet_covariance_matches_min_product() {
    // u nodes (j + 1) / 16, so 0.5 is node 7 and 1 is node 15
    let grid = GridSpec::new(1.0, 16, 15).unwrap();
    let (mean, se) = monte_carlo(100_000, |p| {
        let s = sample_sheet(&grid, &mut PathStream::new(101, p));
        s.sheet[(16, 7)] * s.sheet[(8, 15)]
    });
    // (t1 ∧ t2)(T1 ∧ T2) = 0.5 * 0.5
    assert!((mean - 0.25).abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn sheet_variance_at_corner_is_area() {
    let grid = GridSpec::new(2.0, 8, 15).unwrap();
    let (mean, se) = monte_carlo(50_000, |p| {
        let s = sample_sheet(&grid, &mut PathStream::new(102, p));
        s.sheet[(8, 15)].powi(2)
    });
    assert!((mean - 4.0).abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn warped_sheet_variance_is_h_squared() {
    let grid = GridSpec::new(1.0, 4, 63).unwrap();
    assert_eq!(grid.u_min(), 1.0 / 64.0);
    let sampler = SheetSampler::warped(&grid, &MaturityWarp::Linear).unwrap();
    let (mean, se) = monte_carlo(100_000, |p| {
        let s = sampler.sample(&mut PathStream::new(103, p));
        s.sheet[(4, 63)].powi(2)
    });
    assert!((mean - 1.0).abs() <= 3.0 * se, "{mean} ± {se}");

    // at u = 1/2 the sheet coordinate is h^2 = 1/4
    let (mean, se) = monte_carlo(100_000, |p| {
        let s = sampler.sample(&mut PathStream::new(104, p));
        s.sheet[(4, 31)].powi(2)
    });
    assert!((mean - 0.25).abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn normalized_field_covariance() {
    let grid = GridSpec::new(1.0, 8, 15).unwrap();
    let (mean, se) = monte_carlo(100_000, |p| {
        let s = sample_sheet(&grid, &mut PathStream::new(105, p));
        let z = build_field(&s, &FieldKind::Normalized, &grid).unwrap();
        z.values[(8, 3)] * z.values[(8, 15)]
    });
    // sqrt(0.25 / 1)
    assert!((mean - 0.5).abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn scaled_field_covariance_for_power_warp() {
    let grid = GridSpec::new(1.0, 8, 15).unwrap();
    let warp = MaturityWarp::Power { exponent: 2.0 };
    let kind = FieldKind::Scaled(warp.clone());
    let (mean, se) = monte_carlo(100_000, |p| {
        let s = sample_sheet_on_warped_grid(&grid, &warp, &mut PathStream::new(106, p)).unwrap();
        let z = build_field(&s, &kind, &grid).unwrap();
        z.values[(4, 7)] * z.values[(8, 15)]
    });
    // t h^2(0.5) / (h(0.5) h(1)) = 0.5 * 0.0625 / 0.25
    assert!((mean - 0.125).abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn constant_and_decreasing_warps_are_rejected() {
    let grid = GridSpec::new(1.0, 4, 7).unwrap();
    let flat = MaturityWarp::table(vec![0.0, 2.0], vec![1.0, 1.0]).unwrap();
    assert!(matches!(
        SheetSampler::warped(&grid, &flat),
        Err(Error::NonMonotoneWarp { .. })
    ));
    let down = MaturityWarp::table(vec![0.0, 0.5, 2.0], vec![0.1, 1.0, 0.5]).unwrap();
    match SheetSampler::warped(&grid, &down) {
        // h peaks at u = 0.5 (node 3) and falls on the next cell
        Err(Error::NonMonotoneWarp { cell, .. }) => assert_eq!(cell, 4),
        other => panic!("expected rejection, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sheet_vanishes_at_time_zero(seed in any::<u64>(), n_time in 1usize..12, n_mat in 1usize..12) {
        let grid = GridSpec::new(1.5, n_time, n_mat).unwrap();
        let s = sample_sheet(&grid, &mut PathStream::new(seed, 0));
        prop_assert!(s.sheet.row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sheet_is_the_double_cumulative_sum(seed in any::<u64>(), n_time in 1usize..8, n_mat in 1usize..8) {
        let grid = GridSpec::new(1.0, n_time, n_mat).unwrap();
        let s = sample_sheet(&grid, &mut PathStream::new(seed, 3));
        for i in 0..=n_time {
            for j in 0..=n_mat {
                let mut direct = 0.0;
                for k in 0..i {
                    for l in 0..=j {
                        direct += s.increments[(k, l)];
                    }
                }
                prop_assert!((direct - s.sheet[(i, j)]).abs() <= 1e-12 * (1.0 + direct.abs()));
            }
        }
    }

    #[test]
    fn sqrt_warp_reproduces_plain_sheet(seed in any::<u64>(), path in 0u64..1000) {
        let grid = GridSpec::new(1.0, 6, 9).unwrap();
        let plain = sample_sheet(&grid, &mut PathStream::new(seed, path));
        let warped = sample_sheet_on_warped_grid(&grid, &MaturityWarp::Sqrt, &mut PathStream::new(seed, path)).unwrap();
        prop_assert_eq!(&plain, &warped);
        let a = build_field(&plain, &FieldKind::Normalized, &grid).unwrap();
        let b = build_field(&warped, &FieldKind::Scaled(MaturityWarp::Sqrt), &grid).unwrap();
        prop_assert_eq!(a.values, b.values);
    }

    #[test]
    fn distinct_paths_draw_distinct_noise(seed in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assume!(a != b);
        let grid = GridSpec::new(1.0, 2, 2).unwrap();
        let x = sample_sheet(&grid, &mut PathStream::new(seed, a));
        let y = sample_sheet(&grid, &mut PathStream::new(seed, b));
        prop_assert_ne!(x.increments, y.increments);
    }
}

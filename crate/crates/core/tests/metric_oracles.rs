//! Dimension oracles: Cantor covering counts against the interval
//! structure, Assouad and box exponents against log 2 / log 3, snowflake
//! distortion against the square-root curve, and the perfectness bound
//! against exact covering counts on a deep tree boundary.

use proptest::prelude::*;
use subatlas_core::boundary::TreeBoundary;
use subatlas_core::metric_analysis::{
    box_dimension, cantor_points, covering_number, lower_assouad_estimate,
    lower_assouad_from_samples, qs_distortion, up_dimension_bound, warp_metric,
    FiniteMetricSpace,
};
use subatlas_core::space::GroupPresentation;
use subatlas_core::{PointedSpace, SublinearFunction};

fn cantor_space(level: u32) -> FiniteMetricSpace {
    FiniteMetricSpace::from_points_1d(&cantor_points(level)).unwrap()
}

/// Level-k interval count of a point set: distinct k-digit ternary
/// prefixes. Independent of any covering computation.
fn interval_count(points: &[f64], k: u32) -> usize {
    let mut prefixes: Vec<u64> = points
        .iter()
        .map(|&x| {
            let mut rest = x;
            let mut code = 0u64;
            for i in 1..=k {
                let digit = 2.0 * 3.0_f64.powi(-(i as i32));
                code <<= 1;
                // Points are exact sums of these digits, so the greedy
                // expansion recovers them without rounding.
                if rest >= digit - 1e-12 {
                    code |= 1;
                    rest -= digit;
                }
            }
            code
        })
        .collect();
    prefixes.sort_unstable();
    prefixes.dedup();
    prefixes.len()
}

#[test]
fn cantor_covering_counts_match_the_interval_oracle() {
    let points = cantor_points(7);
    let ms = cantor_space(7);
    let big_r = ms.diameter();
    for k in 1..=6u32 {
        let r = 3.0_f64.powi(-(k as i32));
        let bracket = covering_number(&ms, 0, big_r, r).unwrap();
        let oracle = interval_count(&points, k);
        assert_eq!(oracle, 1usize << k);
        // A radius 3^-k ball centered at a point covers exactly its level-k
        // interval, so packing and net both land on the interval count.
        assert_eq!(bracket.lower, oracle, "packing at k = {k}");
        assert_eq!(bracket.upper, oracle, "net at k = {k}");
    }
}

#[test]
fn cantor_assouad_exponent_is_log2_over_log3() {
    let ms = cantor_space(8);
    let big_r = ms.diameter();
    let pairs: Vec<(f64, f64)> = (1..=6)
        .map(|k| (big_r, 3.0_f64.powi(-k)))
        .collect();
    let report = lower_assouad_estimate(&ms, &pairs).unwrap();
    let want = 2.0_f64.ln() / 3.0_f64.ln();
    assert!(
        (report.s - want).abs() <= 0.05,
        "s = {}, want about {}",
        report.s,
        want
    );
    assert!(report.c > 0.0);
}

#[test]
fn cantor_box_dimension_agrees_and_dominates_lower_assouad() {
    let ms = cantor_space(8);
    let grid: Vec<f64> = (1..=6).map(|k| 3.0_f64.powi(-k)).collect();
    let box_dim = box_dimension(&ms, &grid).unwrap();
    let want = 2.0_f64.ln() / 3.0_f64.ln();
    assert!((box_dim - want).abs() <= 0.05, "box = {box_dim}");

    let big_r = ms.diameter();
    let pairs: Vec<(f64, f64)> = (1..=6)
        .map(|k| (big_r, 3.0_f64.powi(-k)))
        .collect();
    let report = lower_assouad_estimate(&ms, &pairs).unwrap();
    assert!(report.s <= box_dim + 0.05);
}

#[test]
fn line_box_dimension_is_near_one_and_single_point_is_zero() {
    let xs: Vec<f64> = (0..1024).map(|i| i as f64).collect();
    let ms = FiniteMetricSpace::from_points_1d(&xs).unwrap();
    // Radii 2^k - 1 make the greedy stride exactly 2^k, so counts are
    // exact powers of two and the unit spacing cannot flatten the slope.
    let grid: Vec<f64> = (2..=9).map(|k| (1u32 << k) as f64 - 1.0).collect();
    let box_dim = box_dimension(&ms, &grid).unwrap();
    assert!((box_dim - 1.0).abs() <= 0.1, "box = {box_dim}");

    let single = FiniteMetricSpace::from_matrix(1, vec![0.0]).unwrap();
    let flat = box_dimension(&single, &[0.01, 0.1, 1.0, 2.0]).unwrap();
    assert_eq!(flat, 0.0);
}

#[test]
fn snowflake_distortion_stays_under_the_square_root_curve() {
    let ms = cantor_space(7);
    let f = SublinearFunction::constant(1.0).unwrap();
    let warped = warp_metric(&ms, &f, 0.5, 1.0).unwrap();
    assert!(warped.rescaled_by.is_none());
    let grid = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0];
    let sqrt2 = 2.0_f64.sqrt();
    let profile = qs_distortion(&ms, &warped.space, &grid, Some(sqrt2), 0).unwrap();
    assert!(profile.exhaustive);
    for (&t, &h) in grid.iter().zip(profile.h.iter()) {
        assert!(h <= sqrt2 * t.sqrt() * (1.0 + 1e-9), "H({t}) = {h}");
    }
    assert!(!profile.exceeds_eta);
}

#[test]
fn tree_boundary_covering_meets_the_perfectness_bound() {
    let s = PointedSpace::cayley_ball(&GroupPresentation::free(2), 8)
        .unwrap()
        .with_margin(0);
    let f = SublinearFunction::constant(1.0).unwrap();
    let eps = 3.0_f64.ln();
    let tb = TreeBoundary::build(&s, &f, 8, Some(eps)).unwrap();

    let grid: Vec<f64> = (1..=6).map(|k| 3.0_f64.powi(-k)).collect();
    let report = tb.perfectness_scan(&grid, &[3.0, 9.0, 27.0]).unwrap();
    assert_eq!(report.s, Some(3.0));

    let samples = tb
        .covering_samples(&[(0, 1), (0, 3), (0, 6), (1, 7), (2, 8)], 97)
        .unwrap();
    let fit = lower_assouad_from_samples(&samples).unwrap();
    let bound = up_dimension_bound(3.0).unwrap();
    assert!(
        fit.s >= bound - 0.05,
        "fitted s = {} below the perfectness bound {}",
        fit.s,
        bound
    );
    // The branching itself pins the exponent near 1 here, far above the
    // log 2 / log 3 floor the boundary construction promises.
    assert!(fit.s >= 2.0_f64.ln() / 3.0_f64.ln() - 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn covering_brackets_nest_on_random_line_sets(
        mut xs in proptest::collection::btree_set(0u32..400, 3..24),
        num in 1u32..40,
        den in 1u32..8,
    ) {
        let pts: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
        xs.clear();
        let ms = FiniteMetricSpace::from_points_1d(&pts).unwrap();
        let r = num as f64 / den as f64;
        let big_r = r * 4.0;
        let bracket = covering_number(&ms, 0, big_r, r).unwrap();
        prop_assert!(bracket.lower <= bracket.upper);
        if let Some(e) = bracket.exact {
            prop_assert!(bracket.lower <= e && e <= bracket.upper);
        }
    }

    #[test]
    fn distortion_profiles_are_monotone_on_snowflake_pairs(
        xs in proptest::collection::btree_set(1u32..200, 4..16),
        exp_num in 3u32..10,
    ) {
        let pts: Vec<f64> = xs.iter().map(|&x| x as f64 / 200.0).collect();
        let ms = FiniteMetricSpace::from_points_1d(&pts).unwrap();
        let f = SublinearFunction::constant(1.0).unwrap();
        let eps = exp_num as f64 / 10.0;
        let warped = warp_metric(&ms, &f, eps, 1.0).unwrap();
        let grid = [0.1, 0.3, 0.9, 2.7];
        let profile = qs_distortion(&ms, &warped.space, &grid, None, 0).unwrap();
        for w in profile.h.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
    }
}

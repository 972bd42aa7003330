//! Boundary oracles: products against the classical half-sum formula,
//! metrization against exhaustive chain minimization, covering counts
//! against matrix clustering, and the deep-tree perfectness constant.

use rand_core::{RngCore, SeedableRng};
use subatlas_core::boundary::{
    frink_metrize, sample_boundary, uniform_perfectness_scan, BoundaryAtlas, QuasiMetric,
    TreeBoundary,
};
use subatlas_core::space::GroupPresentation;
use subatlas_core::{PointedSpace, SublinearFunction};

fn free_ball(radius: u32) -> PointedSpace {
    PointedSpace::cayley_ball(&GroupPresentation::free(2), radius).unwrap()
}

#[test]
fn products_equal_halfsum_oracle_on_full_depth5_atlas() {
    let s = free_ball(8);
    let f = SublinearFunction::constant(1.0).unwrap();
    let points = sample_boundary(&s, &f, 5, None, 0).unwrap().points;
    assert_eq!(points.len(), 324);
    let atlas = BoundaryAtlas::build(&s, &f, points, Some(1.0)).unwrap();
    for i in 0..atlas.len() {
        for j in (i + 1)..atlas.len() {
            let (u, v) = (atlas.points()[i].endpoint(), atlas.points()[j].endpoint());
            let d = s.distance(u, v).unwrap() as f64;
            let halfsum = (s.depth(u) as f64 + s.depth(v) as f64 - d) / 2.0;
            assert_eq!(atlas.product(i, j), halfsum);
            assert!(atlas.product(i, j) <= atlas.rho_depth());
        }
    }
}

#[test]
fn ultrametric_constant_is_exactly_one_at_depth6() {
    let s = free_ball(8);
    let f = SublinearFunction::constant(1.0).unwrap();
    let points = sample_boundary(&s, &f, 6, None, 0).unwrap().points;
    assert_eq!(points.len(), 972);
    let atlas = BoundaryAtlas::build(&s, &f, points, Some(3.0_f64.ln())).unwrap();
    assert!(atlas.fourpoint_defect().unwrap() <= 0.0);
    let qm = atlas.visual_quasimetric().unwrap();
    assert!((qm.constant() - 1.0).abs() <= 1e-12);
}

/// Minimum chain length from s to t by dynamic programming over subsets of
/// intermediate vertices. Weights are positive, so some optimal chain is
/// simple and the enumeration is exhaustive.
fn exhaustive_chain(d: &QuasiMetric, s: usize, t: usize) -> f64 {
    let n = d.len();
    let others: Vec<usize> = (0..n).filter(|&v| v != s).collect();
    let m = others.len();
    let mut best = vec![vec![f64::INFINITY; m]; 1usize << m];
    for (bi, &v) in others.iter().enumerate() {
        best[1usize << bi][bi] = d.at(s, v);
    }
    let mut answer = f64::INFINITY;
    for mask in 1usize..(1usize << m) {
        for last in 0..m {
            if mask & (1 << last) == 0 || !best[mask][last].is_finite() {
                continue;
            }
            let cost = best[mask][last];
            if others[last] == t {
                answer = answer.min(cost);
            }
            for next in 0..m {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let cand = cost + d.at(others[last], others[next]);
                let slot = &mut best[mask | (1 << next)][next];
                if cand < *slot {
                    *slot = cand;
                }
            }
        }
    }
    answer
}

#[test]
fn frink_matches_exhaustive_chain_minimization() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20240817);
    let uniform = |rng: &mut rand_chacha::ChaCha8Rng| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    for _ in 0..100 {
        // Entries in [1/2, 1] force the quasi-triangle constant <= 2.
        let n = 10;
        let mut d = vec![0.0_f64; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let x = 0.5 + 0.5 * uniform(&mut rng);
                d[i * n + j] = x;
                d[j * n + i] = x;
            }
        }
        let qm = QuasiMetric::from_matrix(n, d).unwrap();
        assert!(qm.constant() <= 2.0);
        let metric = frink_metrize(&qm).unwrap();
        assert!(metric.is_metric());
        for s in 0..n {
            for t in 0..n {
                if s == t {
                    continue;
                }
                let oracle = exhaustive_chain(&qm, s, t);
                assert!((metric.at(s, t) - oracle).abs() <= 1e-12);
                assert!(metric.at(s, t) >= 0.25 * qm.at(s, t) - 1e-12);
                assert!(metric.at(s, t) <= qm.at(s, t) + 1e-12);
            }
        }
    }
}

#[test]
fn deep_tree_perfectness_passes_at_the_branching_ratio() {
    let s = free_ball(10).with_margin(0);
    let f = SublinearFunction::constant(1.0).unwrap();
    let tb = TreeBoundary::build(&s, &f, 10, Some(3.0_f64.ln())).unwrap();
    assert_eq!(tb.len(), 78_732);
    assert_eq!(tb.merged(), 0);
    let grid: Vec<f64> = (1..=8).map(|k| 3.0_f64.powi(-k)).collect();
    let report = tb.perfectness_scan(&grid, &[3.0, 9.0, 27.0]).unwrap();
    assert_eq!(report.s, Some(3.0));
    assert_eq!(report.attempts[0].failures, 0);
    assert!(!report.degenerate);
}

#[test]
fn covering_counts_match_matrix_clustering() {
    let s = free_ball(8);
    for f in [
        SublinearFunction::constant(1.0).unwrap(),
        SublinearFunction::log(),
    ] {
        let tb = TreeBoundary::build(&s, &f, 6, Some(3.0_f64.ln())).unwrap();
        let atlas = tb.to_atlas(&s, &f).unwrap();
        let qm = atlas.visual_quasimetric().unwrap();
        let slack = 1.0 + 1e-9;
        for &(j, k) in &[(1u32, 3u32), (2, 4), (1, 4)] {
            let big_r = tb.distance_at_level(j);
            let r = tb.distance_at_level(k);
            for i in (0..tb.len()).step_by(49) {
                // Independent route: collect the ball from the matrix, then
                // cluster it by the radius-r relation, which is transitive
                // in an ultrametric.
                let members: Vec<usize> = (0..tb.len())
                    .filter(|&y| qm.at(i, y) <= big_r * slack)
                    .collect();
                let mut reps: Vec<usize> = Vec::new();
                for &y in &members {
                    if !reps.iter().any(|&rep| qm.at(y, rep) <= r * slack) {
                        reps.push(y);
                    }
                }
                assert_eq!(tb.covering_count(i, j, k).unwrap(), reps.len());
            }
        }
    }
}

#[test]
fn subsampled_boundary_detects_its_own_gaps() {
    // Keep one deep cluster and a few far directions: radii just below the
    // cluster gap have no witnesses, exactly like an isolated point.
    let s = free_ball(8);
    let f = SublinearFunction::constant(1.0).unwrap();
    let sphere = s.sphere(6);
    let mut chosen = vec![sphere[0], sphere[1], sphere[2]];
    chosen.push(*sphere.last().unwrap());
    let points: Vec<_> = chosen
        .iter()
        .map(|&v| {
            subatlas_core::boundary::BoundaryPoint::new(&s, s.geodesic(s.basepoint(), v).unwrap())
                .unwrap()
        })
        .collect();
    let atlas = BoundaryAtlas::build(&s, &f, points, Some(3.0_f64.ln())).unwrap();
    let qm = atlas.visual_quasimetric().unwrap();
    // The last direction's nearest neighbor is at distance 1; radii near
    // the cluster scale fail for it.
    let report = uniform_perfectness_scan(&qm, &[qm.min_positive()], &[3.0]).unwrap();
    assert_eq!(report.s, None);
    assert!(report.attempts[0].failures > 0);
}

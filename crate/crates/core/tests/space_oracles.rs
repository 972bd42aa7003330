//! Cross-checks of ball construction against closed-form counts and of
//! geodesic queries against independent searches.

use proptest::prelude::*;
use subatlas_core::kappa::SublinearFunction;
use subatlas_core::space::{GroupPresentation, PointedSpace};

/// Free group of rank 2: sphere n has 4 * 3^(n-1) elements.
#[test]
fn free_sphere_counts_to_radius_12() {
    let s = PointedSpace::cayley_ball(&GroupPresentation::free(2), 12).unwrap();
    let sizes = s.sphere_sizes();
    assert_eq!(sizes[0], 1);
    let mut expect = 4usize;
    for n in 1..=12 {
        assert_eq!(sizes[n], expect, "sphere {n}");
        expect *= 3;
    }
    assert_eq!(s.vertex_count(), sizes.iter().sum::<usize>());
}

/// Z^2: sphere n has 4n elements (L1 circle).
#[test]
fn z2_sphere_counts_to_radius_50() {
    let s = PointedSpace::cayley_ball(&GroupPresentation::z2(), 50).unwrap();
    let sizes = s.sphere_sizes();
    assert_eq!(sizes[0], 1);
    for n in 1..=50 {
        assert_eq!(sizes[n], 4 * n, "sphere {n}");
    }
    // |B_R| = 2R^2 + 2R + 1.
    assert_eq!(s.vertex_count(), 2 * 50 * 50 + 2 * 50 + 1);
}

/// Radius-1 balls count one vertex per generator and inverse.
#[test]
fn radius_one_counts() {
    for (p, expect) in [
        (GroupPresentation::free(3), 6),
        (GroupPresentation::z2(), 4),
        (GroupPresentation::free2_with_ab(), 6),
    ] {
        let s = PointedSpace::cayley_ball(&p, 1).unwrap();
        assert_eq!(s.sphere_sizes()[1], expect);
    }
}

/// The word metric on {a,b,ab} never exceeds the {a,b} metric and never
/// shrinks it by more than half (c = ab replaces at most two letters).
#[test]
fn extended_generating_set_is_bilipschitz() {
    let base = PointedSpace::cayley_ball(&GroupPresentation::free(2), 6).unwrap();
    let ext = PointedSpace::cayley_ball(&GroupPresentation::free2_with_ab(), 6).unwrap();
    // Match vertices by their free normal-form labels.
    let mut by_label = std::collections::BTreeMap::new();
    for v in 0..ext.vertex_count() as u32 {
        by_label.insert(ext.label(v).unwrap().to_string(), v);
    }
    let mut checked = 0;
    for v in 0..base.vertex_count() as u32 {
        if let Some(&w) = by_label.get(base.label(v).unwrap()) {
            let db = base.depth(v) as f64;
            let de = ext.depth(w) as f64;
            assert!(de <= db + 1e-9, "|x| must not grow");
            assert!(db <= 2.0 * de + 1e-9, "|x| at most halves");
            checked += 1;
        }
    }
    assert!(checked > 100, "labels matched: {checked}");
}

fn random_space_strategy() -> impl Strategy<Value = (PointedSpace, u64)> {
    (0..2u8, any::<u64>()).prop_map(|(which, seed)| {
        let s = match which {
            0 => PointedSpace::cayley_ball(&GroupPresentation::free(2), 6).unwrap(),
            _ => PointedSpace::cayley_ball(&GroupPresentation::z2(), 8).unwrap(),
        };
        (s, seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Canonical geodesics realize the graph distance.
    #[test]
    fn geodesic_length_equals_distance((s, seed) in random_space_strategy()) {
        let n = s.vertex_count() as u64;
        // 160 deterministic pseudo-random pairs per case; with 64 cases this
        // exceeds the 10^4-pair budget.
        let mut x = seed | 1;
        for _ in 0..160 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = ((x >> 20) % n) as u32;
            let v = ((x >> 43) % n) as u32;
            let d = s.distance(u, v).unwrap();
            let g = s.geodesic(u, v).unwrap();
            prop_assert_eq!(g.length(), d);
            prop_assert_eq!(g.first(), u);
            prop_assert_eq!(g.last(), v);
            prop_assert!(g.is_geodesic(&s));
        }
    }

    /// Neighborhood membership is monotone in the scale multiplier.
    #[test]
    fn kappa_nbhd_monotone_in_m(seed in any::<u64>(), m in 0.0f64..6.0) {
        let s = PointedSpace::cayley_ball(&GroupPresentation::z2(), 8).unwrap();
        let f = SublinearFunction::log();
        let n = s.vertex_count() as u64;
        let mut x = seed | 1;
        let mut z = Vec::new();
        for _ in 0..5 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            z.push(((x >> 17) % n) as u32);
        }
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let probe = ((x >> 17) % n) as u32;
        let small = s.kappa_nbhd_contains(&f, &z, m, probe).unwrap();
        let big = s.kappa_nbhd_contains(&f, &z, m + 0.7, probe).unwrap();
        prop_assert!(!small || big);
    }
}

/// BFS distances agree with an independent Floyd-Warshall on a small ball.
#[test]
fn distances_match_floyd_warshall() {
    let s = PointedSpace::cayley_ball(&GroupPresentation::z2(), 4).unwrap();
    let n = s.vertex_count();
    let inf = u32::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for v in 0..n {
        d[v][v] = 0;
        for &w in s.neighbors(v as u32) {
            d[v][w as usize] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    for u in 0..n as u32 {
        let bfs = s.distances_from(u);
        for v in 0..n as u32 {
            assert_eq!(bfs[v as usize], d[u as usize][v as usize]);
        }
    }
}

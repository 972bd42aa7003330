//! Oracle tests for the scale-function calculus: closed forms, an
//! independent trapezoid quadrature, and randomized inequality checks.

use proptest::prelude::*;
use subatlas_core::kappa::{geometric_grid, RhoCache, StrictSublinearity, SublinearFunction};

fn families() -> Vec<SublinearFunction> {
    vec![
        SublinearFunction::constant(1.0).unwrap(),
        SublinearFunction::log(),
        SublinearFunction::power(0.25).unwrap(),
        SublinearFunction::power(0.5).unwrap(),
        SublinearFunction::power(0.75).unwrap(),
        SublinearFunction::power_over_log(),
    ]
}

/// Closed form for kappa(t) = (1+t)^p: rho(t) = ((1+t)^(1-p) - 1)/(1-p).
fn rho_power_closed(p: f64, t: f64) -> f64 {
    ((1.0 + t).powf(1.0 - p) - 1.0) / (1.0 - p)
}

/// Independent oracle: 1e6-panel trapezoid on a graded grid {0} followed by
/// a geometric progression from 1e-4 to t. Grading keeps the panel error
/// below ~5e-9 for every family used here.
fn trapezoid_oracle(f: &SublinearFunction, t: f64) -> f64 {
    let n = 1_000_000usize;
    let start: f64 = 1e-4;
    let ratio = (t / start).ln() / (n - 1) as f64;
    let mut sum = 0.0;
    let mut prev_s = 0.0;
    let mut prev_g = 1.0 / f.eval(0.0);
    for i in 0..n {
        let s = start * (ratio * i as f64).exp();
        let g = 1.0 / f.eval(s);
        sum += 0.5 * (g + prev_g) * (s - prev_s);
        prev_s = s;
        prev_g = g;
    }
    sum
}

#[test]
fn rho_sqrt_family_matches_closed_form() {
    let f = SublinearFunction::power(0.5).unwrap();
    let v = f.rho(3.0).unwrap();
    // 2(sqrt(4) - 1) = 2
    assert!((v.value - 2.0).abs() < 1e-9, "rho(3) = {}", v.value);
    for t in [0.0, 0.5, 1.0, 10.0, 1e3, 1e6] {
        let got = f.rho(t).unwrap().value;
        let want = rho_power_closed(0.5, t);
        assert!((got - want).abs() < 1e-8, "t={t}: {got} vs {want}");
    }
}

#[test]
fn rho_power_families_match_closed_form() {
    for p in [0.25, 0.75] {
        let f = SublinearFunction::power(p).unwrap();
        for t in [1.0, 7.0, 123.0, 1e5] {
            let got = f.rho(t).unwrap().value;
            let want = rho_power_closed(p, t);
            assert!(
                (got - want).abs() < 1e-7 * want.max(1.0),
                "p={p} t={t}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn rho_log_family_matches_trapezoid_oracle() {
    let f = SublinearFunction::log();
    let got = f.rho(1e4).unwrap().value;
    let oracle = trapezoid_oracle(&f, 1e4);
    assert!(
        (got - oracle).abs() < 1e-8,
        "rho = {got}, oracle = {oracle}, diff = {}",
        got - oracle
    );
}

#[test]
fn rho_inverse_sqrt_family() {
    let f = SublinearFunction::power(0.5).unwrap();
    let t = f.rho_inverse(2.0).unwrap();
    assert!((t - 3.0).abs() < 1e-7, "t = {t}");
}

#[test]
fn rho_round_trip_log_family() {
    let f = SublinearFunction::log();
    let y = f.rho(137.0).unwrap().value;
    let t = f.rho_inverse(y).unwrap();
    assert!((t - 137.0).abs() <= 1e-6, "round trip gave {t}");
}

#[test]
fn table_sampling_sqrt_matches_closed_form() {
    // Sample kappa(t) = sqrt(1+t) on a dense graded grid; the interpolant's
    // rho stays within 1e-4 of the closed form.
    let mut nodes = vec![(0.0, 1.0)];
    let mut t: f64 = 1e-3;
    while t < 100.0 {
        nodes.push((t, (1.0 + t).sqrt()));
        t *= 1.01;
    }
    nodes.push((100.0, 101.0f64.sqrt()));
    let f = SublinearFunction::from_table(&nodes).unwrap();
    assert!(f.verify_admissible(&geometric_grid(1e-3, 100.0, 200)).unwrap().passes);
    let got = f.rho(100.0).unwrap().value;
    let want = rho_power_closed(0.5, 100.0);
    assert!((got - want).abs() < 1e-4, "{got} vs {want}");
}

#[test]
fn rho_unbounded_for_log_family() {
    let f = SublinearFunction::log();
    let near = f.rho(1e3).unwrap().value;
    let far = f.rho(1e6).unwrap().value;
    assert!(far > near + 10.0, "rho(1e6)={far} rho(1e3)={near}");
}

#[test]
fn all_families_pass_admissibility() {
    let grid = geometric_grid(1e-3, 1e6, 256);
    for f in families() {
        let report = f.verify_admissible(&grid).unwrap();
        assert!(report.passes, "{} failed: {:?}", f.family_name(), report);
    }
}

#[test]
fn strict_sublinearity_certificates_are_valid() {
    for f in families() {
        if let StrictSublinearity::Holds { c0, delta } = f.strict_sublinearity() {
            assert!(delta > 0.0);
            let mut t = 1.0;
            while t < 1e10 {
                assert!(
                    f.eval(t) <= c0 * t.powf(1.0 - delta) * (1.0 + 1e-9),
                    "{} at t={t}",
                    f.family_name()
                );
                t *= 2.3;
            }
        }
    }
}

#[test]
fn rho_cache_sweep_is_monotone_and_consistent() {
    let f = SublinearFunction::log();
    let mut cache = RhoCache::new(&f);
    let mut prev = 0.0;
    for r in 1..=500u32 {
        let v = cache.rho(r as f64);
        assert!(v > prev);
        prev = v;
    }
    let direct = f.rho(500.0).unwrap().value;
    assert!((prev - direct).abs() < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bounded_error_gap_is_at_most_a(r in 0.0..1e6f64, a in 0.0..10.0f64, idx in 0usize..6) {
        let f = &families()[idx];
        let gap = f.bounded_error_gap(r, a).unwrap();
        prop_assert!(gap <= a + 2.0 * f.quad_tol(), "{}: gap {gap} > {a}", f.family_name());
        prop_assert!(gap >= -f.quad_tol());
    }

    #[test]
    fn concave_scale_inequality(lam in 0.0..1.0f64, t in 0.0..1e6f64, idx in 0usize..6) {
        let f = &families()[idx];
        prop_assert!(f.eval(lam * t) >= lam * f.eval(t) - 1e-9 * f.eval(t));
    }

    #[test]
    fn subadditive_inequality(t in 0.0..1e6f64, u in 0.0..1e6f64, idx in 0usize..6) {
        let f = &families()[idx];
        prop_assert!(f.eval(t + u) <= f.eval(t) + f.eval(u) + 1e-9 * f.eval(t + u));
    }

    #[test]
    fn rho_is_one_lipschitz(t in 0.0..1e5f64, h in 0.0..1e4f64, idx in 0usize..6) {
        let f = &families()[idx];
        let a = f.rho(t).unwrap().value;
        let b = f.rho(t + h).unwrap().value;
        prop_assert!(b - a <= h + 2.0 * f.quad_tol());
        prop_assert!(b >= a);
    }

    #[test]
    fn scale_comparison_within_bookkeeping_constant(
        r1 in 0.0..1e6f64,
        frac in -1.0..1.0f64,
        a in 0.0..8.0f64,
        idx in 0usize..6,
    ) {
        let f = &families()[idx];
        let r2 = (r1 + frac * a * f.eval(r1)).max(0.0);
        let sc = f.scale_comparison(r1, r2, a).unwrap();
        prop_assert!(sc.kappa_ratio <= sc.bound + 1e-9);
        prop_assert!(sc.kappa_ratio >= 1.0 / sc.bound - 1e-9);
        prop_assert!(sc.rho_gap <= sc.bound + 1e-9);
    }
}

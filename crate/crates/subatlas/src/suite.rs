//! Cross-module verification batteries at desk scale. Every battery is
//! deterministic in the seed, so two runs with the same config produce
//! byte-identical artifacts; batteries run in a fixed order regardless
//! of the worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::Args;
use rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subatlas_core::boundary::{frink_metrize, sample_boundary, BoundaryAtlas, QuasiMetric, TreeBoundary};
use subatlas_core::kappa::{default_admissibility_grid, SublinearFunction};
use subatlas_core::metric_analysis::{
    box_dimension, cantor_points, lower_assouad_estimate, qs_distortion, warp_metric,
    FiniteMetricSpace,
};
use subatlas_core::morse::{
    center_set, empirical_gauge_table, slim_delta, IdealTriangle, MorseError, QuasiGeodesicParams,
};
use subatlas_core::sbe::{
    boundary_extension, correspondence_by_labels, estimate_sbe, kappa_subdivision,
    CorrespondenceMap,
};
use subatlas_core::space::{GroupPresentation, PointedSpace};

use crate::config::{err, CliResult, Ctx};
use crate::report::{jstr, sig12, Json, RunOutput, Table};

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Inject a known-bad configuration (`linear-kappa`) to confirm the
    /// suite surfaces it
    #[arg(long)]
    pub inject: Option<String>,
    /// Quadrature tolerance applied to every scale family
    #[arg(long)]
    pub quad_tol: Option<f64>,
}

struct SuiteCtx {
    seed: u64,
    quad_tol: Option<f64>,
}

/// Ok carries (checks run, summary); Err carries the failure detail.
type BatteryFn = fn(&SuiteCtx) -> Result<(usize, String), String>;

struct Outcome {
    name: &'static str,
    passed: bool,
    checks: usize,
    detail: String,
}

pub fn verify_suite(ctx: &Ctx, args: &SuiteArgs) -> CliResult<RunOutput> {
    let mut batteries: Vec<(&'static str, BatteryFn)> = vec![
        ("kappa-admissibility", kappa_admissibility),
        ("kappa-bounded-error", kappa_bounded_error),
        ("kappa-concavity", kappa_concavity),
        ("space-spheres", space_spheres),
        ("morse-tree-exactness", morse_tree_exactness),
        ("morse-gauge-growth", morse_gauge_growth),
        ("centers-median", centers_median),
        ("boundary-ultrametric", boundary_ultrametric),
        ("frink-sandwich", frink_sandwich),
        ("dimension-cantor", dimension_cantor),
        ("warp-snowflake", warp_snowflake),
        ("subdivision-invariants", subdivision_invariants),
        ("sbe-fits", sbe_fits),
        ("extension-identity", extension_identity),
    ];
    match args.inject.as_deref() {
        None => {}
        Some("linear-kappa") => batteries.push(("injected-linear-kappa", injected_linear_kappa)),
        Some(other) => return err(format!("unknown injection `{other}` (linear-kappa)")),
    }

    let sctx = SuiteCtx {
        seed: ctx.seed,
        quad_tol: args.quad_tol,
    };
    let outcomes = run_batteries(&batteries, &sctx, ctx.threads.max(1));

    let mut echo = Json::obj();
    echo.push("seed", Json::Int(ctx.seed as i64));
    if let Some(t) = args.quad_tol {
        echo.push("quad_tol", Json::Num(t));
    }
    if let Some(i) = &args.inject {
        echo.push("inject", jstr(i));
    }
    let mut run = RunOutput::new("verify-suite", echo);

    let mut rows = Vec::new();
    let mut csv = Table::new(&["battery", "passed", "checks"]);
    let mut failed = 0usize;
    for o in &outcomes {
        let mut j = Json::obj();
        j.push("name", jstr(o.name));
        j.push("passed", Json::Bool(o.passed));
        j.push("checks", Json::Int(o.checks as i64));
        j.push("detail", jstr(&o.detail));
        rows.push(j);
        csv.row(&[o.name.to_string(), o.passed.to_string(), o.checks.to_string()]);
        run.line(format!(
            "[{}] {}: {}",
            if o.passed { "ok" } else { "FAIL" },
            o.name,
            o.detail
        ));
        if !o.passed {
            failed += 1;
        }
    }
    let mut j = Json::obj();
    j.push("batteries", Json::Arr(rows));
    j.push("total", Json::Int(outcomes.len() as i64));
    j.push("failed", Json::Int(failed as i64));
    run.artifact("suite.json", j.render());
    run.artifact("suite.csv", csv.render());
    run.line(format!(
        "{} batteries, {} passed, {} failed",
        outcomes.len(),
        outcomes.len() - failed,
        failed
    ));
    run.ok = failed == 0;
    Ok(run)
}

/// Pulls battery indices off a shared counter; slots keep results in the
/// declared order whatever the interleaving.
fn run_batteries(
    batteries: &[(&'static str, BatteryFn)],
    sctx: &SuiteCtx,
    threads: usize,
) -> Vec<Outcome> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Outcome>>> = Mutex::new((0..batteries.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(batteries.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= batteries.len() {
                    break;
                }
                let (name, f) = batteries[i];
                let outcome = match f(sctx) {
                    Ok((checks, detail)) => Outcome {
                        name,
                        passed: true,
                        checks,
                        detail,
                    },
                    Err(detail) => Outcome {
                        name,
                        passed: false,
                        checks: 0,
                        detail,
                    },
                };
                slots.lock().expect("no poisoned battery slots")[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned battery slots")
        .into_iter()
        .map(|o| o.expect("every battery ran"))
        .collect()
}

fn families(quad_tol: Option<f64>) -> Result<Vec<(&'static str, SublinearFunction)>, String> {
    let mut out = vec![
        ("constant", SublinearFunction::constant(1.0).map_err(|e| e.to_string())?),
        ("log", SublinearFunction::log()),
        ("power", SublinearFunction::power(0.5).map_err(|e| e.to_string())?),
        ("power-over-log", SublinearFunction::power_over_log()),
    ];
    if let Some(tol) = quad_tol {
        for (_, f) in &mut out {
            *f = f.clone().with_quad_tol(tol).map_err(|e| e.to_string())?;
        }
    }
    Ok(out)
}

fn unif(rng: &mut ChaCha8Rng) -> f64 {
    rng.next_u64() as f64 / u64::MAX as f64
}

fn kappa_admissibility(ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let grid = default_admissibility_grid();
    let mut checks = 0;
    for (name, f) in families(ctx.quad_tol)? {
        let report = f.verify_admissible(&grid).map_err(|e| e.to_string())?;
        if !report.passes {
            return Err(format!(
                "{name}: admissibility violated by {}",
                sig12(report.max_violation())
            ));
        }
        checks += report.grid_len;
    }
    Ok((checks, "4 families admissible on the default grid".into()))
}

fn kappa_bounded_error(ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x6b61_7070_6101);
    let mut checks = 0;
    for (name, f) in families(ctx.quad_tol)? {
        let slack = 2.0 * f.quad_tol() + 1e-12;
        for _ in 0..40 {
            let r = (9.21 * unif(&mut rng)).exp();
            let a = 10.0 * unif(&mut rng);
            let gap = f.bounded_error_gap(r, a).map_err(|e| e.to_string())?;
            if gap > a + slack || gap < -slack {
                return Err(format!(
                    "{name}: gap {} outside [0, a] + tolerance at r = {}, a = {}",
                    sig12(gap),
                    sig12(r),
                    sig12(a)
                ));
            }
            checks += 1;
        }
    }
    Ok((checks, "scale gaps within the additive budget".into()))
}

fn kappa_concavity(ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x6b61_7070_6102);
    let mut checks = 0;
    for (name, f) in families(ctx.quad_tol)? {
        for _ in 0..200 {
            let t = (13.8 * unif(&mut rng)).exp();
            let lam = unif(&mut rng);
            let scaled = f.eval(lam * t);
            if scaled < lam * f.eval(t) - 1e-9 * scaled.max(1.0) {
                return Err(format!("{name}: kappa({} t) < {} kappa(t)", sig12(lam), sig12(lam)));
            }
            let s2 = (13.8 * unif(&mut rng)).exp();
            if f.eval(t + s2) > f.eval(t) + f.eval(s2) + 1e-9 {
                return Err(format!("{name}: subadditivity fails at {} + {}", sig12(t), sig12(s2)));
            }
            checks += 2;
        }
    }
    Ok((checks, "scaling and subadditivity hold on random samples".into()))
}

fn space_spheres(_ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let free = PointedSpace::cayley_ball(&GroupPresentation::free(2), 6).map_err(|e| e.to_string())?;
    let want: Vec<usize> = (0..=6).map(|r| if r == 0 { 1 } else { 4 * 3usize.pow(r - 1) }).collect();
    if free.sphere_sizes() != want {
        return Err(format!("free2 sphere sizes {:?}", free.sphere_sizes()));
    }
    if !free.is_tree() {
        return Err("free2 ball is not recognized as a tree".into());
    }
    let flat = PointedSpace::cayley_ball(&GroupPresentation::z2(), 5).map_err(|e| e.to_string())?;
    let want: Vec<usize> = (0..=5).map(|r| if r == 0 { 1 } else { 4 * r }).collect();
    if flat.sphere_sizes() != want {
        return Err(format!("z2 sphere sizes {:?}", flat.sphere_sizes()));
    }
    if flat.is_tree() {
        return Err("z2 ball misread as a tree".into());
    }
    let d01 = flat.distance(0, 7).map_err(|e| e.to_string())?;
    let d10 = flat.distance(7, 0).map_err(|e| e.to_string())?;
    if d01 != d10 {
        return Err("distance is not symmetric".into());
    }
    Ok((15, "BFS spheres match the group growth".into()))
}

fn morse_tree_exactness(ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let s = PointedSpace::cayley_ball(&GroupPresentation::free(2), 6).map_err(|e| e.to_string())?;
    let f = SublinearFunction::constant(1.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x6d6f_7273_6501);
    let trusted: Vec<u32> = (0..s.vertex_count() as u32)
        .filter(|&v| s.depth(v) <= s.trusted_radius())
        .collect();
    let mut checks = 0;
    let mut attempts = 0;
    while checks < 30 && attempts < 300 {
        attempts += 1;
        let pick = |rng: &mut ChaCha8Rng| trusted[(rng.next_u64() % trusted.len() as u64) as usize];
        let (u, v, w) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        if u == v || v == w || u == w {
            continue;
        }
        // Collinear corners make a segment, not a triangle; redraw.
        let t = match IdealTriangle::from_corners(&s, u, v, w) {
            Ok(t) => t,
            Err(MorseError::DegenerateTriangle { .. }) => continue,
            Err(e) => return Err(e.to_string()),
        };
        let delta = slim_delta(&s, &f, &t);
        if delta != 0.0 {
            return Err(format!("tree triangle ({u},{v},{w}) has slim delta {}", sig12(delta)));
        }
        checks += 1;
    }
    if checks < 30 {
        return Err(format!("only {checks} nondegenerate triangles in {attempts} draws"));
    }
    let z = s.geodesic(0, s.sphere(5)[0]).map_err(|e| e.to_string())?;
    let qq = QuasiGeodesicParams::new(1.0, 0.0).map_err(|e| e.to_string())?;
    let est = empirical_gauge_table(&s, &f, &z, core::slice::from_ref(&qq), 50, ctx.seed)
        .map_err(|e| e.to_string())?;
    if est.m_hat() != 0.0 {
        return Err(format!("tree geodesic gauge {} instead of 0", sig12(est.m_hat())));
    }
    Ok((checks + 1, "tree triangles are 0-slim and geodesics unique".into()))
}

fn morse_gauge_growth(ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let s = PointedSpace::cayley_ball(&GroupPresentation::z2(), 7).map_err(|e| e.to_string())?;
    let f = SublinearFunction::log();
    // The most balanced deep vertex: label closest to a diagonal word.
    let diagonal = |v: u32| {
        let label = s.label(v).unwrap_or("");
        let a = label.chars().filter(|c| c.eq_ignore_ascii_case(&'a')).count();
        let b = label.chars().filter(|c| c.eq_ignore_ascii_case(&'b')).count();
        a.min(b)
    };
    let deep = *s.sphere(6).iter().max_by_key(|&&v| diagonal(v)).expect("nonempty sphere");
    let shallow = *s.sphere(3).iter().max_by_key(|&&v| diagonal(v)).expect("nonempty sphere");
    let qqs = [
        QuasiGeodesicParams::new(1.0, 0.0).map_err(|e| e.to_string())?,
        QuasiGeodesicParams::new(1.5, 1.0).map_err(|e| e.to_string())?,
        QuasiGeodesicParams::new(2.0, 2.0).map_err(|e| e.to_string())?,
    ];
    let gauge = |v: u32| -> Result<Vec<f64>, String> {
        let z = s.geodesic(0, v).map_err(|e| e.to_string())?;
        let est = empirical_gauge_table(&s, &f, &z, &qqs, 80, ctx.seed).map_err(|e| e.to_string())?;
        Ok(est.entries.iter().map(|e| e.m_hat).collect())
    };
    let deep_hats = gauge(deep)?;
    let shallow_hats = gauge(shallow)?;
    if !(deep_hats[0] <= deep_hats[1] && deep_hats[1] <= deep_hats[2]) {
        return Err(format!(
            "gauge not monotone under (q,Q) dominance: {:?}",
            deep_hats.iter().map(|&x| sig12(x)).collect::<Vec<_>>()
        ));
    }
    if deep_hats[2] < shallow_hats[2] || deep_hats[2] < 1.0 {
        return Err(format!(
            "diagonal gauge did not grow: {} at depth 6 vs {} at depth 3",
            sig12(deep_hats[2]),
            sig12(shallow_hats[2])
        ));
    }
    Ok((6, format!("flat-grid gauge grows with depth (m = {})", sig12(deep_hats[2]))))
}

fn centers_median(ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let s = PointedSpace::cayley_ball(&GroupPresentation::free(2), 5).map_err(|e| e.to_string())?;
    let f = SublinearFunction::constant(1.0).map_err(|e| e.to_string())?;
    // Three deep corners in distinct depth-1 subtrees meet only at the root.
    let top = |v: u32| {
        let mut cur = v;
        while s.depth(cur) > 1 {
            cur = s.canonical_parent(cur).expect("positive depth");
        }
        cur
    };
    let sphere = s.sphere(4);
    let mut corners = Vec::new();
    let mut seen = Vec::new();
    for &v in &sphere {
        let t = top(v);
        if !seen.contains(&t) {
            seen.push(t);
            corners.push(v);
            if corners.len() == 3 {
                break;
            }
        }
    }
    let t = IdealTriangle::from_corners(&s, corners[0], corners[1], corners[2])
        .map_err(|e| e.to_string())?;
    let centers = center_set(&s, &f, &t, 0.0).map_err(|e| e.to_string())?;
    if centers.len() != 1 || centers[0].x != s.basepoint() {
        return Err(format!(
            "expected the root as the unique 0-center, got {} centers",
            centers.len()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x6365_6e74_6572);
    let trusted: Vec<u32> = (0..s.vertex_count() as u32)
        .filter(|&v| s.depth(v) <= s.trusted_radius())
        .collect();
    let mut checks = 1;
    let mut attempts = 0;
    while checks < 11 && attempts < 200 {
        attempts += 1;
        let pick = |rng: &mut ChaCha8Rng| trusted[(rng.next_u64() % trusted.len() as u64) as usize];
        let (u, v, w) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        if u == v || v == w || u == w {
            continue;
        }
        let t = match IdealTriangle::from_corners(&s, u, v, w) {
            Ok(t) => t,
            Err(MorseError::DegenerateTriangle { .. }) => continue,
            Err(e) => return Err(e.to_string()),
        };
        let k = slim_delta(&s, &f, &t);
        if center_set(&s, &f, &t, k).map_err(|e| e.to_string())?.is_empty() {
            return Err(format!("empty center set at K = slim delta for ({u},{v},{w})"));
        }
        checks += 1;
    }
    if checks < 11 {
        return Err(format!("only {} nondegenerate triangles in {attempts} draws", checks - 1));
    }
    Ok((checks, "tripod median is the unique 0-center; K = delta never empty".into()))
}

fn boundary_ultrametric(_ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let s = PointedSpace::cayley_ball(&GroupPresentation::free(2), 6).map_err(|e| e.to_string())?;
    let f = SublinearFunction::constant(1.0).map_err(|e| e.to_string())?;
    let tb = TreeBoundary::build(&s, &f, 5, Some(1.0)).map_err(|e| e.to_string())?;
    let n = tb.len();
    let mut checks = 0;
    for i in (0..n).step_by(7) {
        for j in ((i + 1)..n).step_by(5) {
            let got = tb.product(i, j);
            let want = tb.lca_depth(i, j) as f64;
            if (got - want).abs() > 1e-9 {
                return Err(format!(
                    "product({i},{j}) = {} but the rays branch at depth {}",
                    sig12(got),
                    want
                ));
            }
            checks += 1;
        }
    }
    let sample = sample_boundary(&s, &f, 5, None, 0).map_err(|e| e.to_string())?;
    let atlas = BoundaryAtlas::build(&s, &f, sample.points, Some(1.0)).map_err(|e| e.to_string())?;
    let qm = atlas.visual_quasimetric().map_err(|e| e.to_string())?;
    if (qm.constant() - 1.0).abs() > 1e-9 || !qm.is_metric() {
        return Err(format!(
            "visual quasimetric constant {} on a tree boundary",
            sig12(qm.constant())
        ));
    }
    for i in (0..qm.len()).step_by(9) {
        for j in (0..qm.len()).step_by(7) {
            for k in (0..qm.len()).step_by(11) {
                if i != j && j != k && i != k {
                    let lhs = qm.at(i, k);
                    let rhs = qm.at(i, j).max(qm.at(j, k));
                    if lhs > rhs + 1e-12 {
                        return Err(format!("ultrametric inequality fails at ({i},{j},{k})"));
                    }
                    checks += 1;
                }
            }
        }
    }
    let defect = atlas.fourpoint_defect().map_err(|e| e.to_string())?;
    if defect > 1e-12 {
        return Err(format!("tree fourpoint defect {}", sig12(defect)));
    }
    Ok((checks + 1, "tree products exact, visual metric ultrametric".into()))
}

fn frink_sandwich(ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x6672_696e_6b01);
    let n = 8;
    let mut checks = 0;
    for case in 0..20 {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 1.0 + unif(&mut rng);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        let qm = QuasiMetric::from_matrix(n, d).map_err(|e| e.to_string())?;
        let chained = frink_metrize(&qm).map_err(|e| e.to_string())?;
        if !chained.is_metric() {
            return Err(format!("case {case}: chain metrization is not a metric"));
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (orig, got) = (qm.at(i, j), chained.at(i, j));
                if got > orig + 1e-12 || got < orig / 4.0 - 1e-12 {
                    return Err(format!(
                        "case {case}: d({i},{j}) = {} outside [q/4, q] for q = {}",
                        sig12(got),
                        sig12(orig)
                    ));
                }
                checks += 1;
            }
        }
    }
    Ok((checks, "chain metrization stays within a quarter".into()))
}

fn dimension_cantor(_ctx: &SuiteCtx) -> Result<(usize, String), String> {
    // Two decades of radii that stay above the point gap 2 * 3^-7.
    let ms = FiniteMetricSpace::from_points_1d(&cantor_points(7)).map_err(|e| e.to_string())?;
    let target = std::f64::consts::LN_2 / 3.0f64.ln();
    let radii: Vec<f64> = (1..=6).map(|k| 3.0f64.powi(-k)).collect();
    let bd = box_dimension(&ms, &radii).map_err(|e| e.to_string())?;
    if (bd - target).abs() > 0.08 {
        return Err(format!(
            "box dimension {} is far from {}",
            sig12(bd),
            sig12(target)
        ));
    }
    let pairs: Vec<(f64, f64)> = (1..=6).map(|k| (ms.diameter(), 3.0f64.powi(-k))).collect();
    let rep = lower_assouad_estimate(&ms, &pairs).map_err(|e| e.to_string())?;
    if rep.s < target - 0.1 || rep.s > 0.75 {
        return Err(format!("lower dimension estimate {} out of range", sig12(rep.s)));
    }
    Ok((
        pairs.len() + radii.len(),
        format!("middle-thirds dimension near {}", sig12(target)),
    ))
}

fn warp_snowflake(ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let ms = FiniteMetricSpace::from_points_1d(&cantor_points(5)).map_err(|e| e.to_string())?;
    let f = SublinearFunction::constant(1.0).map_err(|e| e.to_string())?;
    // With a constant scale the warp is exactly t^(eps/a).
    let outcome = warp_metric(&ms, &f, 0.5, 1.0).map_err(|e| e.to_string())?;
    let mut checks = 0;
    for (got, orig) in outcome.space.entries().iter().zip(ms.entries()) {
        if (got - orig.sqrt()).abs() > 1e-9 {
            return Err(format!(
                "warped distance {} differs from sqrt {}",
                sig12(*got),
                sig12(orig.sqrt())
            ));
        }
        checks += 1;
    }
    // d^p of a line metric is K-quasi with K = 2^p: d(x,z)^p <= (2 max)^p.
    if outcome.quasi_constant > std::f64::consts::SQRT_2 + 1e-9 || outcome.quasi_constant < 1.0 {
        return Err(format!(
            "snowflake quasi-triangle constant {}",
            sig12(outcome.quasi_constant)
        ));
    }
    let t_grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let profile =
        qs_distortion(&ms, &outcome.space, &t_grid, None, ctx.seed).map_err(|e| e.to_string())?;
    for (i, &t) in profile.t_grid.iter().enumerate() {
        if profile.h[i] > std::f64::consts::SQRT_2 * t.sqrt() + 1e-9 {
            return Err(format!(
                "distortion H({}) = {} above sqrt(2 t)",
                sig12(t),
                sig12(profile.h[i])
            ));
        }
        checks += 1;
    }
    Ok((checks, "entrywise square root with modulus sqrt(2 t)".into()))
}

fn subdivision_invariants(ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let spaces = [
        PointedSpace::cayley_ball(&GroupPresentation::free(2), 6).map_err(|e| e.to_string())?,
        PointedSpace::cayley_ball(&GroupPresentation::z2(), 5).map_err(|e| e.to_string())?,
    ];
    let fams = families(ctx.quad_tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ 0x7375_6264_6976);
    let mut checks = 0;
    for s in &spaces {
        let n = s.vertex_count() as u64;
        for _ in 0..25 {
            let u = (rng.next_u64() % n) as u32;
            let v = (rng.next_u64() % n) as u32;
            if u == v {
                continue;
            }
            let z = s.geodesic(u, v).map_err(|e| e.to_string())?;
            for (name, f) in &fams {
                let waypoints = kappa_subdivision(s, f, &z).map_err(|e| e.to_string())?;
                let verts = z.vertices();
                let pos: Vec<usize> = waypoints
                    .iter()
                    .map(|w| verts.iter().position(|x| x == w).expect("waypoint on path"))
                    .collect();
                if waypoints.first() != verts.first() || waypoints.last() != verts.last() {
                    return Err(format!("{name}: subdivision misses an endpoint"));
                }
                let mut total = 0usize;
                for i in 1..pos.len() {
                    let gap = pos[i] - pos[i - 1];
                    total += gap;
                    let depth = s.depth(waypoints[i - 1]) as f64;
                    if gap as f64 > f.eval(depth) + 1e-9 {
                        return Err(format!(
                            "{name}: gap {gap} above kappa({depth}) on a length-{} geodesic",
                            z.length()
                        ));
                    }
                }
                if total != z.length() as usize {
                    return Err(format!("{name}: gaps sum to {total}, length {}", z.length()));
                }
                checks += 1;
            }
        }
    }
    Ok((checks, "waypoint gaps stay within scale and sum to length".into()))
}

fn sbe_fits(_ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let s = PointedSpace::cayley_ball(&GroupPresentation::free(2), 5).map_err(|e| e.to_string())?;
    let f = SublinearFunction::constant(1.0).map_err(|e| e.to_string())?;
    let id = CorrespondenceMap::identity(&s);
    let est = estimate_sbe(&s, &s, &id, &f, 0, 0).map_err(|e| e.to_string())?;
    if est.k != 1.0 || est.a != 0.0 || est.b != 0.0 || est.surjectivity_defect != 0.0 {
        return Err(format!(
            "identity fit (K, A, B) = ({}, {}, {})",
            sig12(est.k),
            sig12(est.a),
            sig12(est.b)
        ));
    }
    let x = PointedSpace::cayley_ball(&GroupPresentation::free(2), 4).map_err(|e| e.to_string())?;
    let y = PointedSpace::cayley_ball(&GroupPresentation::free2_with_ab(), 4)
        .map_err(|e| e.to_string())?;
    let fmap =
        correspondence_by_labels(&x, &y, &[('c', "ab"), ('C', "BA")]).map_err(|e| e.to_string())?;
    let est = estimate_sbe(&x, &y, &fmap, &f, 0, 0).map_err(|e| e.to_string())?;
    if est.k > 2.0 + 1e-12 || est.a != 0.0 {
        return Err(format!(
            "generating-set change fit (K, A, B) = ({}, {}, {})",
            sig12(est.k),
            sig12(est.a),
            sig12(est.b)
        ));
    }
    Ok((2, "identity exact; generating-set change within K = 2".into()))
}

fn extension_identity(_ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let s = PointedSpace::cayley_ball(&GroupPresentation::free(2), 5).map_err(|e| e.to_string())?;
    let f = SublinearFunction::constant(1.0).map_err(|e| e.to_string())?;
    let sample = sample_boundary(&s, &f, 4, None, 0).map_err(|e| e.to_string())?;
    let atlas = BoundaryAtlas::build(&s, &f, sample.points, Some(1.0)).map_err(|e| e.to_string())?;
    let matching: Vec<usize> = (0..atlas.len()).collect();
    let out = boundary_extension(&s, &s, &atlas, &atlas, &matching, &f, 0.0, 2.0)
        .map_err(|e| e.to_string())?;
    let mut checks = 0;
    for v in 0..s.vertex_count() as u32 {
        let depth = s.depth(v);
        if depth < 1 || depth > 3 {
            continue;
        }
        if out.map.apply(v) != v {
            return Err(format!("interior vertex {v} moved to {}", out.map.apply(v)));
        }
        if out.defects[v as usize] != Some(0.0) {
            return Err(format!("interior vertex {v} has a nonzero balance defect"));
        }
        checks += 1;
    }
    Ok((checks, "identity matching extends to the identity on the interior".into()))
}

/// A linear scale is not sublinear; this battery is expected to fail and
/// prove the suite surfaces admissibility violations.
fn injected_linear_kappa(_ctx: &SuiteCtx) -> Result<(usize, String), String> {
    let nodes = [
        (0.0, 1.0),
        (1.0, 2.0),
        (100.0, 101.0),
        (1e4, 1e4 + 1.0),
        (1e6, 1e6 + 1.0),
    ];
    let f = SublinearFunction::from_table(&nodes).map_err(|e| e.to_string())?;
    let report = f
        .verify_admissible(&default_admissibility_grid())
        .map_err(|e| e.to_string())?;
    if !report.passes {
        let worst = report
            .checks
            .iter()
            .max_by(|a, b| a.violation.total_cmp(&b.violation))
            .expect("four checks");
        return Err(format!(
            "linear scale rejected: {} check violated by {}",
            worst.name,
            sig12(worst.violation)
        ));
    }
    Ok((1, "linear scale unexpectedly admissible".into()))
}

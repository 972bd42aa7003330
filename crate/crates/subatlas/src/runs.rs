//! Subcommand implementations. Each resolves its parameters (explicit
//! flags win over config-file values), builds the core objects, runs the
//! experiment, and returns summary lines plus named artifacts; property
//! failures set `ok = false` instead of erroring.

use clap::Args;
use rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subatlas_core::boundary::{
    sample_boundary, uniform_perfectness_scan, BoundaryAtlas, PerfectnessReport, QuasiMetric,
    TreeBoundary,
};
use subatlas_core::kappa::{
    default_admissibility_grid, geometric_grid, StrictSublinearity, SublinearFunction,
};
use subatlas_core::metric_analysis::{
    box_dimension, cantor_points, lower_assouad_estimate, lower_assouad_from_samples,
    qs_distortion, up_dimension_bound, warp_doubling_constant, warp_metric, FiniteMetricSpace,
};
use subatlas_core::morse::{
    center_set, center_exhaustiveness, empirical_gauge_table, slim_delta, sphere_rays,
    CoverageMethod, IdealTriangle, MorseError, QuasiGeodesicParams, SampleMethod,
};
use subatlas_core::sbe::{
    boundary_extension, coarse_inverse_defect, correspondence_by_labels, estimate_sbe,
    kappa_subdivision, CorrespondenceMap, InverseDefect, PairResidual, SbeError,
};
use subatlas_core::space::{Path as GraphPath, PointedSpace};

use crate::config::{
    build_kappa, build_space, build_space_for_depth, err, load_matching, load_matrix,
    load_vertex_map, parse_f64_list, resolve_codomain, resolve_kappa, resolve_space, CliResult,
    CodomainArgs, ConfigError, Ctx,
    KappaArgs, ResolvedKappa, ResolvedSpace, SpaceArgs,
};
use crate::report::{jnums, jstr, sig12, Json, RunOutput, Table};

fn core<T, E: std::fmt::Display>(r: Result<T, E>) -> CliResult<T> {
    r.map_err(|e| ConfigError(e.to_string()))
}

/// Geometric grid of positive scales; the admissibility grid's leading
/// zero has no place among radii.
fn scale_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut g = geometric_grid(lo, hi, n);
    if g.first() == Some(&0.0) {
        g.remove(0);
    }
    g
}

fn kappa_echo(rk: &ResolvedKappa) -> Json {
    let mut j = Json::obj();
    j.push("family", jstr(&rk.family));
    j.push("c", Json::Num(rk.c));
    j.push("p", Json::Num(rk.p));
    if let Some(t) = rk.quad_tol {
        j.push("quad_tol", Json::Num(t));
    }
    if let Some(fl) = rk.floor {
        j.push("floor", Json::Num(fl));
    }
    j
}

fn space_echo(rs: &ResolvedSpace, s: &PointedSpace) -> Json {
    let mut j = Json::obj();
    j.push("spec", jstr(&rs.spec));
    j.push("radius", Json::Int(s.radius() as i64));
    j.push("margin", Json::Int(s.margin() as i64));
    j.push("basepoint", Json::Int(s.basepoint() as i64));
    j
}

fn sample_method_str(m: SampleMethod) -> &'static str {
    match m {
        SampleMethod::Exhaustive => "exhaustive",
        SampleMethod::Sampled => "sampled",
    }
}

/// Deepest vertex in BFS order; ties go to the first one discovered.
fn deepest_vertex(s: &PointedSpace) -> u32 {
    s.sphere(s.radius())[0]
}

/// Random trusted corner triples whose geodesic sides form a genuine
/// triangle; collinear draws are discarded. May return fewer than `n`
/// if the space is too segment-like.
fn seeded_trusted_triangles(
    s: &PointedSpace,
    n: usize,
    seed: u64,
) -> CliResult<Vec<([u32; 3], IdealTriangle)>> {
    let trusted: Vec<u32> = (0..s.vertex_count() as u32)
        .filter(|&v| s.depth(v) <= s.trusted_radius())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = || trusted[(rng.next_u64() % trusted.len() as u64) as usize];
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n && attempts < n.saturating_mul(50).max(200) {
        attempts += 1;
        let (u, v, w) = (pick(), pick(), pick());
        if u == v || v == w || u == w {
            continue;
        }
        match IdealTriangle::from_corners(s, u, v, w) {
            Ok(t) => out.push(([u, v, w], t)),
            Err(MorseError::DegenerateTriangle { .. }) => continue,
            Err(e) => return Err(ConfigError(e.to_string())),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// kappa-check

#[derive(Debug, Args)]
pub struct KappaCheckArgs {
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Smallest grid point (with --grid-max and --grid-points)
    #[arg(long)]
    pub grid_min: Option<f64>,
    /// Largest grid point
    #[arg(long)]
    pub grid_max: Option<f64>,
    /// Number of geometric grid points
    #[arg(long)]
    pub grid_points: Option<usize>,
}

pub fn kappa_check(ctx: &Ctx, args: &KappaCheckArgs) -> CliResult<RunOutput> {
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let f = build_kappa(&rk)?;
    let grid = match (args.grid_min, args.grid_max, args.grid_points) {
        (None, None, None) => default_admissibility_grid(),
        (Some(lo), Some(hi), Some(n)) => geometric_grid(lo, hi, n),
        _ => return err("pass all of --grid-min, --grid-max, --grid-points or none"),
    };
    let report = core(f.verify_admissible(&grid))?;
    let strict = f.strict_sublinearity();

    let mut echo = Json::obj();
    echo.push("kappa", kappa_echo(&rk));
    echo.push("grid_len", Json::Int(grid.len() as i64));
    let mut run = RunOutput::new("kappa-check", echo);

    let mut j = Json::obj();
    j.push("family", jstr(f.family_name()));
    j.push("params", jnums(&f.params()));
    j.push("floor", Json::Num(f.floor()));
    j.push("quad_tol", Json::Num(f.quad_tol()));
    j.push("describe", jstr(f.describe()));
    j.push("grid_len", Json::Int(report.grid_len as i64));
    j.push("tol", Json::Num(report.tol));
    let mut checks = Vec::new();
    for c in &report.checks {
        let mut cj = Json::obj();
        cj.push("name", jstr(c.name));
        cj.push("violation", Json::Num(c.violation));
        checks.push(cj);
    }
    j.push("checks", Json::Arr(checks));
    j.push("max_violation", Json::Num(report.max_violation()));
    j.push("passes", Json::Bool(report.passes));
    let mut sj = Json::obj();
    match strict {
        StrictSublinearity::Holds { c0, delta } => {
            sj.push("holds", Json::Bool(true));
            sj.push("c0", Json::Num(c0));
            sj.push("delta", Json::Num(delta));
        }
        StrictSublinearity::Fails { reason } => {
            sj.push("holds", Json::Bool(false));
            sj.push("reason", jstr(reason));
        }
    }
    j.push("strict_sublinearity", sj);
    let mut rho_rows = Vec::new();
    for t in [1.0, 10.0, 100.0, 1e4, 1e6] {
        let rv = core(f.rho(t))?;
        let mut row = Json::obj();
        row.push("t", Json::Num(t));
        row.push("rho", Json::Num(rv.value));
        rho_rows.push(row);
    }
    j.push("rho_samples", Json::Arr(rho_rows));
    run.artifact("kappa_check.json", j.render());

    if report.passes {
        run.line(format!(
            "{}: admissible (max violation {})",
            f.describe(),
            sig12(report.max_violation())
        ));
    } else {
        let worst = report
            .checks
            .iter()
            .max_by(|a, b| a.violation.total_cmp(&b.violation))
            .expect("four checks");
        run.line(format!(
            "{}: NOT admissible ({} violated by {})",
            f.describe(),
            worst.name,
            sig12(worst.violation)
        ));
        run.ok = false;
    }
    run.line(match f.strict_sublinearity() {
        StrictSublinearity::Holds { c0, delta } => format!(
            "strict sublinearity holds: kappa(t) <= {} t^(1-{})",
            sig12(c0),
            sig12(delta)
        ),
        StrictSublinearity::Fails { reason } => {
            format!("strict sublinearity fails: {reason}")
        }
    });
    Ok(run)
}

// ---------------------------------------------------------------------------
// build-space

#[derive(Debug, Args)]
pub struct BuildSpaceArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
}

pub fn build_space_cmd(ctx: &Ctx, args: &BuildSpaceArgs) -> CliResult<RunOutput> {
    let rs = resolve_space(ctx, &args.space)?;
    let s = build_space(&rs)?;

    let mut echo = Json::obj();
    echo.push("space", space_echo(&rs, &s));
    let mut run = RunOutput::new("build-space", echo);

    let n = s.vertex_count();
    let mut edge_count = 0usize;
    let mut edges = Table::new(&["u", "v", "weight"]);
    for u in 0..n as u32 {
        for &v in s.neighbors(u) {
            if u < v {
                let w = core(GraphPath::new(&s, vec![u, v]))?.length();
                edges.row(&[u.to_string(), v.to_string(), w.to_string()]);
                edge_count += 1;
            }
        }
    }
    let mut vertices = Table::new(&["id", "depth", "label"]);
    for v in 0..n as u32 {
        vertices.row(&[
            v.to_string(),
            s.depth(v).to_string(),
            s.label(v).unwrap_or("").to_string(),
        ]);
    }

    let mut j = Json::obj();
    j.push("spec", jstr(&rs.spec));
    j.push("vertices", Json::Int(n as i64));
    j.push("edges", Json::Int(edge_count as i64));
    j.push("radius", Json::Int(s.radius() as i64));
    j.push("margin", Json::Int(s.margin() as i64));
    j.push("trusted_radius", Json::Int(s.trusted_radius() as i64));
    j.push("basepoint", Json::Int(s.basepoint() as i64));
    j.push("is_tree", Json::Bool(s.is_tree()));
    j.push("is_unit_weight", Json::Bool(s.is_unit_weight()));
    j.push(
        "sphere_sizes",
        Json::Arr(
            s.sphere_sizes()
                .iter()
                .map(|&c| Json::Int(c as i64))
                .collect(),
        ),
    );
    run.artifact("space.json", j.render());
    run.artifact("vertices.csv", vertices.render());
    run.artifact("edges.csv", edges.render());
    run.line(format!(
        "{}: {} vertices, {} edges, radius {} (trusted {}), tree: {}",
        rs.spec,
        n,
        edge_count,
        s.radius(),
        s.trusted_radius(),
        s.is_tree()
    ));
    Ok(run)
}

// ---------------------------------------------------------------------------
// morse-gauge

#[derive(Debug, Args)]
pub struct MorseGaugeArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Geodesic start vertex (default: basepoint)
    #[arg(long)]
    pub from: Option<u32>,
    /// Geodesic end vertex (default: a deepest vertex)
    #[arg(long)]
    pub to: Option<u32>,
    /// Quasigeodesic parameters as `q,Q`; repeatable
    #[arg(long = "pair")]
    pub pairs: Vec<String>,
    /// Sample budget per (q,Q)
    #[arg(long)]
    pub samples: Option<u64>,
}

pub fn morse_gauge(ctx: &Ctx, args: &MorseGaugeArgs) -> CliResult<RunOutput> {
    let rs = resolve_space(ctx, &args.space)?;
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let s = build_space(&rs)?;
    let f = build_kappa(&rk)?;
    let from = args.from.unwrap_or(s.basepoint());
    let to = args.to.unwrap_or_else(|| deepest_vertex(&s));
    let samples = ctx.u64_param(args.samples, "samples")?.unwrap_or(400) as usize;
    let z = core(s.geodesic(from, to))?;
    let mut qqs = Vec::new();
    if args.pairs.is_empty() {
        qqs.push(core(QuasiGeodesicParams::new(1.0, 0.0))?);
    }
    for p in &args.pairs {
        let v = parse_f64_list(p, "pair")?;
        if v.len() != 2 {
            return err(format!("--pair wants q,Q, got `{p}`"));
        }
        qqs.push(core(QuasiGeodesicParams::new(v[0], v[1]))?);
    }
    let est = core(empirical_gauge_table(&s, &f, &z, &qqs, samples, ctx.seed))?;

    let mut echo = Json::obj();
    echo.push("space", space_echo(&rs, &s));
    echo.push("kappa", kappa_echo(&rk));
    echo.push("from", Json::Int(from as i64));
    echo.push("to", Json::Int(to as i64));
    echo.push("samples", Json::Int(samples as i64));
    let mut run = RunOutput::new("morse-gauge", echo);

    let mut table = Table::new(&["q", "big_q", "m_hat", "sample_count", "method"]);
    let mut rows = Vec::new();
    for e in &est.entries {
        table.row(&[
            sig12(e.params.q()),
            sig12(e.params.big_q()),
            sig12(e.m_hat),
            e.sample_count.to_string(),
            sample_method_str(e.method).to_string(),
        ]);
        let mut row = Json::obj();
        row.push("q", Json::Num(e.params.q()));
        row.push("big_q", Json::Num(e.params.big_q()));
        row.push("m_hat", Json::Num(e.m_hat));
        row.push("sample_count", Json::Int(e.sample_count as i64));
        row.push("method", jstr(sample_method_str(e.method)));
        rows.push(row);
        run.line(format!(
            "gauge q={} Q={}: m_hat = {} over {} paths ({})",
            sig12(e.params.q()),
            sig12(e.params.big_q()),
            sig12(e.m_hat),
            e.sample_count,
            sample_method_str(e.method)
        ));
    }
    let mut j = Json::obj();
    j.push("from", Json::Int(from as i64));
    j.push("to", Json::Int(to as i64));
    j.push("length", Json::Int(z.length() as i64));
    j.push("entries", Json::Arr(rows));
    run.artifact("gauge.json", j.render());
    run.artifact("gauge.csv", table.render());
    Ok(run)
}

// ---------------------------------------------------------------------------
// slim

#[derive(Debug, Args)]
pub struct SlimArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Number of random trusted triangles
    #[arg(long)]
    pub triangles: Option<u64>,
}

pub fn slim(ctx: &Ctx, args: &SlimArgs) -> CliResult<RunOutput> {
    let rs = resolve_space(ctx, &args.space)?;
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let s = build_space(&rs)?;
    let f = build_kappa(&rk)?;
    let count = ctx.u64_param(args.triangles, "triangles")?.unwrap_or(100) as usize;

    let mut echo = Json::obj();
    echo.push("space", space_echo(&rs, &s));
    echo.push("kappa", kappa_echo(&rk));
    echo.push("triangles", Json::Int(count as i64));
    echo.push("seed", Json::Int(ctx.seed as i64));
    let mut run = RunOutput::new("slim", echo);

    let mut table = Table::new(&["u", "v", "w", "delta"]);
    let mut max_delta = 0.0f64;
    let mut sum = 0.0f64;
    let mut argmax = [0u32; 3];
    let triangles = seeded_trusted_triangles(&s, count, ctx.seed)?;
    let found = triangles.len();
    for (idx, (corners, t)) in triangles.into_iter().enumerate() {
        let delta = slim_delta(&s, &f, &t);
        if idx == 0 || delta > max_delta {
            max_delta = delta;
            argmax = corners;
        }
        sum += delta;
        table.row(&[
            corners[0].to_string(),
            corners[1].to_string(),
            corners[2].to_string(),
            sig12(delta),
        ]);
    }
    let mut j = Json::obj();
    j.push("triangles", Json::Int(found as i64));
    j.push("max_delta", Json::Num(max_delta));
    j.push("mean_delta", Json::Num(sum / found.max(1) as f64));
    j.push(
        "argmax",
        Json::Arr(argmax.iter().map(|&v| Json::Int(v as i64)).collect()),
    );
    run.artifact("slim.json", j.render());
    run.artifact("slim.csv", table.render());
    run.line(format!(
        "slim delta over {} triangles: max {} at ({},{},{}), mean {}",
        found,
        sig12(max_delta),
        argmax[0],
        argmax[1],
        argmax[2],
        sig12(sum / found.max(1) as f64)
    ));
    Ok(run)
}

// ---------------------------------------------------------------------------
// centers

#[derive(Debug, Args)]
pub struct CentersArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Triangle corners as `u,v,w`
    #[arg(long)]
    pub corners: Option<String>,
    /// Center slack K (default: the triangle's slim delta)
    #[arg(long)]
    pub k: Option<f64>,
}

pub fn centers(ctx: &Ctx, args: &CentersArgs) -> CliResult<RunOutput> {
    let rs = resolve_space(ctx, &args.space)?;
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let s = build_space(&rs)?;
    let f = build_kappa(&rk)?;
    let spec = match ctx.str_param(args.corners.clone(), "corners")? {
        Some(c) => c,
        None => return err("pass --corners u,v,w"),
    };
    let parts = parse_f64_list(&spec, "corners")?;
    if parts.len() != 3 || parts.iter().any(|&x| x < 0.0 || x.fract() != 0.0) {
        return err(format!("--corners wants three vertex ids, got `{spec}`"));
    }
    let (u, v, w) = (parts[0] as u32, parts[1] as u32, parts[2] as u32);
    let t = core(IdealTriangle::from_corners(&s, u, v, w))?;
    let delta = slim_delta(&s, &f, &t);
    let k_used = ctx.f64_param(args.k, "k")?.unwrap_or(delta);
    let cs = core(center_set(&s, &f, &t, k_used))?;

    let mut echo = Json::obj();
    echo.push("space", space_echo(&rs, &s));
    echo.push("kappa", kappa_echo(&rk));
    echo.push("corners", jstr(&spec));
    echo.push("k", Json::Num(k_used));
    let mut run = RunOutput::new("centers", echo);

    let mut table = Table::new(&["x", "depth", "d_side0", "d_side1", "d_side2"]);
    for c in &cs {
        table.row(&[
            c.x.to_string(),
            s.depth(c.x).to_string(),
            c.side_dists[0].to_string(),
            c.side_dists[1].to_string(),
            c.side_dists[2].to_string(),
        ]);
    }
    let mut j = Json::obj();
    j.push(
        "corners",
        Json::Arr([u, v, w].iter().map(|&x| Json::Int(x as i64)).collect()),
    );
    j.push("slim_delta", Json::Num(delta));
    j.push("k", Json::Num(k_used));
    j.push("count", Json::Int(cs.len() as i64));
    run.artifact("centers.json", j.render());
    run.artifact("centers.csv", table.render());
    if cs.is_empty() {
        run.line(format!(
            "no centers at K = {} (slim delta {})",
            sig12(k_used),
            sig12(delta)
        ));
    } else {
        run.line(format!(
            "{} centers at K = {} (slim delta {}), first at vertex {}",
            cs.len(),
            sig12(k_used),
            sig12(delta),
            cs[0].x
        ));
    }
    Ok(run)
}

// ---------------------------------------------------------------------------
// exhaustiveness

#[derive(Debug, Args)]
pub struct ExhaustivenessArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Center slack K
    #[arg(long)]
    pub k: Option<f64>,
    /// Sphere depth for the direction rays (default: the radius; sizes
    /// the ball when no --radius is given)
    #[arg(long)]
    pub depth: Option<u32>,
    /// Exclude vertices deeper than radius minus this margin
    #[arg(long)]
    pub coverage_margin: Option<u32>,
}

pub fn exhaustiveness(ctx: &Ctx, args: &ExhaustivenessArgs) -> CliResult<RunOutput> {
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let (rs, s) = build_space_for_depth(ctx, &args.space, args.depth, true)?;
    let f = build_kappa(&rk)?;
    let k = ctx.f64_param(args.k, "k")?.unwrap_or(0.0);
    let depth = args.depth.unwrap_or_else(|| s.radius());
    let margin = args.coverage_margin.unwrap_or_else(|| s.margin());
    let rays = core(sphere_rays(&s, depth))?;
    let report = core(center_exhaustiveness(&s, &f, k, &rays, margin))?;

    let mut echo = Json::obj();
    echo.push("space", space_echo(&rs, &s));
    echo.push("kappa", kappa_echo(&rk));
    echo.push("k", Json::Num(k));
    echo.push("depth", Json::Int(depth as i64));
    echo.push("coverage_margin", Json::Int(margin as i64));
    let mut run = RunOutput::new("exhaustiveness", echo);

    let method = match report.method {
        CoverageMethod::TreeExact => "tree-exact",
        CoverageMethod::Scan => "scan",
    };
    let mut witnesses = Table::new(&["x", "depth", "ray0", "ray1", "ray2", "d0", "d1", "d2"]);
    for w in report.witnesses.iter().take(2000) {
        witnesses.row(&[
            w.x.to_string(),
            s.depth(w.x).to_string(),
            w.rays[0].to_string(),
            w.rays[1].to_string(),
            w.rays[2].to_string(),
            w.side_dists[0].to_string(),
            w.side_dists[1].to_string(),
            w.side_dists[2].to_string(),
        ]);
    }
    let mut j = Json::obj();
    j.push("k", Json::Num(k));
    j.push("depth", Json::Int(depth as i64));
    j.push("directions", Json::Int(rays.len() as i64));
    j.push("coverage_margin", Json::Int(margin as i64));
    j.push("total", Json::Int(report.total as i64));
    j.push("covered", Json::Int(report.covered as i64));
    j.push("coverage", Json::Num(report.coverage()));
    j.push("method", jstr(method));
    j.push("truncated", Json::Bool(report.truncated));
    run.artifact("exhaustiveness.json", j.render());
    run.artifact("witnesses.csv", witnesses.render());
    run.line(format!(
        "coverage {} ({}/{}) with {} directions at K = {} ({})",
        sig12(report.coverage()),
        report.covered,
        report.total,
        rays.len(),
        sig12(k),
        method
    ));
    Ok(run)
}

// ---------------------------------------------------------------------------
// boundary and visual

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Sphere depth of the boundary sample (default: trusted radius;
    /// sizes the ball when no --radius is given)
    #[arg(long)]
    pub depth: Option<u32>,
    /// Directions to sample (default: the full sphere)
    #[arg(long)]
    pub count: Option<u64>,
    /// Visual parameter (default: calibrated from the fourpoint defect)
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Also chain-metrize the visual quasimetric (visual only)
    #[arg(long)]
    pub frink: bool,
}

struct BuiltAtlas {
    atlas: BoundaryAtlas,
    depth: u32,
    requested: Option<usize>,
    merged: usize,
    clamped: bool,
}

fn build_atlas(
    ctx: &Ctx,
    s: &PointedSpace,
    f: &SublinearFunction,
    args: &BoundaryArgs,
) -> CliResult<BuiltAtlas> {
    let depth = args.depth.unwrap_or_else(|| s.trusted_radius());
    let count = ctx.u64_param(args.count, "count")?.map(|c| c as usize);
    let epsilon = ctx.f64_param(args.epsilon, "epsilon")?;
    let sample = core(sample_boundary(s, f, depth, count, ctx.seed))?;
    let merged = sample.merged;
    let clamped = sample.clamped;
    let atlas = core(BoundaryAtlas::build(s, f, sample.points, epsilon))?;
    Ok(BuiltAtlas {
        atlas,
        depth,
        requested: count,
        merged,
        clamped,
    })
}

fn boundary_echo(rs: &ResolvedSpace, s: &PointedSpace, rk: &ResolvedKappa, b: &BuiltAtlas, seed: u64) -> Json {
    let mut echo = Json::obj();
    echo.push("space", space_echo(rs, s));
    echo.push("kappa", kappa_echo(rk));
    echo.push("depth", Json::Int(b.depth as i64));
    match b.requested {
        Some(c) => echo.push("count", Json::Int(c as i64)),
        None => echo.push("count", jstr("full")),
    };
    echo.push("epsilon", Json::Num(b.atlas.epsilon()));
    echo.push("seed", Json::Int(seed as i64));
    echo
}

pub fn boundary(ctx: &Ctx, args: &BoundaryArgs) -> CliResult<RunOutput> {
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let (rs, s) = build_space_for_depth(ctx, &args.space, args.depth, false)?;
    let f = build_kappa(&rk)?;
    let built = build_atlas(ctx, &s, &f, args)?;
    let atlas = &built.atlas;
    let mut run = RunOutput::new("boundary", boundary_echo(&rs, &s, &rk, &built, ctx.seed));

    let mut points = Table::new(&["idx", "endpoint", "depth", "label"]);
    for (i, p) in atlas.points().iter().enumerate() {
        points.row(&[
            i.to_string(),
            p.endpoint().to_string(),
            p.depth().to_string(),
            s.label(p.endpoint()).unwrap_or("").to_string(),
        ]);
    }
    let mut j = Json::obj();
    j.push("depth", Json::Int(built.depth as i64));
    j.push("kept", Json::Int(atlas.len() as i64));
    j.push("merged", Json::Int(built.merged as i64));
    j.push("clamped", Json::Bool(built.clamped));
    j.push("epsilon", Json::Num(atlas.epsilon()));
    j.push("rho_depth", Json::Num(atlas.rho_depth()));
    if atlas.len() <= 400 {
        j.push("fourpoint_defect", Json::Num(core(atlas.fourpoint_defect())?));
    } else {
        j.push("fourpoint_defect", Json::Null);
    }
    run.artifact("atlas.json", j.render());
    run.artifact("atlas_points.csv", points.render());
    if atlas.len() <= 256 {
        let mut prods = Table::new(&["i", "j", "product"]);
        for i in 0..atlas.len() {
            for jx in (i + 1)..atlas.len() {
                prods.row(&[i.to_string(), jx.to_string(), sig12(atlas.product(i, jx))]);
            }
        }
        run.artifact("products.csv", prods.render());
    }
    run.line(format!(
        "atlas at depth {}: {} directions ({} merged), epsilon = {}",
        built.depth,
        atlas.len(),
        built.merged,
        sig12(atlas.epsilon())
    ));
    Ok(run)
}

pub fn visual(ctx: &Ctx, args: &BoundaryArgs) -> CliResult<RunOutput> {
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let (rs, s) = build_space_for_depth(ctx, &args.space, args.depth, false)?;
    let f = build_kappa(&rk)?;
    let built = build_atlas(ctx, &s, &f, args)?;
    let atlas = &built.atlas;
    let qm = core(atlas.visual_quasimetric())?;
    let mut run = RunOutput::new("visual", boundary_echo(&rs, &s, &rk, &built, ctx.seed));

    let mut j = Json::obj();
    j.push("n", Json::Int(qm.len() as i64));
    j.push("epsilon", Json::Num(atlas.epsilon()));
    j.push("constant", Json::Num(qm.constant()));
    j.push("is_metric", Json::Bool(qm.is_metric()));
    j.push("diameter", Json::Num(qm.diameter()));
    j.push("min_positive", Json::Num(qm.min_positive()));
    if args.frink {
        let chained = core(frink(&qm))?;
        let mut worst = 1.0f64;
        for i in 0..qm.len() {
            for jx in 0..qm.len() {
                if i != jx {
                    worst = worst.max(qm.at(i, jx) / chained.at(i, jx));
                }
            }
        }
        let mut fj = Json::obj();
        fj.push("is_metric", Json::Bool(chained.is_metric()));
        fj.push("max_ratio", Json::Num(worst));
        j.push("frink", fj);
        if qm.len() <= 512 {
            run.artifact("frink_matrix.csv", matrix_csv(&chained));
        }
    }
    run.artifact("visual.json", j.render());
    if qm.len() <= 512 {
        run.artifact("visual_matrix.csv", matrix_csv(&qm));
    }
    run.line(format!(
        "visual quasimetric on {} directions: constant {}, diameter {}, metric: {}",
        qm.len(),
        sig12(qm.constant()),
        sig12(qm.diameter()),
        qm.is_metric()
    ));
    Ok(run)
}

fn frink(qm: &QuasiMetric) -> Result<QuasiMetric, subatlas_core::boundary::BoundaryError> {
    subatlas_core::boundary::frink_metrize(qm)
}

fn matrix_csv(qm: &QuasiMetric) -> String {
    let n = qm.len();
    let mut out = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| sig12(qm.at(i, j))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// perfectness

#[derive(Debug, Args)]
pub struct PerfectnessArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Boundary depth (default: trusted radius; sizes the ball when
    /// no --radius is given)
    #[arg(long)]
    pub depth: Option<u32>,
    /// Visual parameter (default: calibrated)
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Number of default grid radii
    #[arg(long)]
    pub levels: Option<u64>,
    /// Explicit grid radii, comma separated (default: occupied
    /// distance levels)
    #[arg(long)]
    pub grid: Option<String>,
    /// Explicit candidate constants, comma separated (default: powers
    /// of the measured shell constant, or of the branching ratio on
    /// trees)
    #[arg(long)]
    pub candidates: Option<String>,
    /// Directions to sample in atlas mode (default: full sphere)
    #[arg(long)]
    pub count: Option<u64>,
}

pub fn perfectness(ctx: &Ctx, args: &PerfectnessArgs) -> CliResult<RunOutput> {
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let (rs, s) = build_space_for_depth(ctx, &args.space, args.depth, false)?;
    let f = build_kappa(&rk)?;
    let depth = args.depth.unwrap_or_else(|| s.trusted_radius());
    let epsilon = ctx.f64_param(args.epsilon, "epsilon")?;
    let levels = ctx.u64_param(args.levels, "levels")?.unwrap_or(8) as u32;
    let tree_mode = s.is_tree() && s.is_unit_weight();

    let mut echo = Json::obj();
    echo.push("space", space_echo(&rs, &s));
    echo.push("kappa", kappa_echo(&rk));
    echo.push("depth", Json::Int(depth as i64));
    if let Some(e) = epsilon {
        echo.push("epsilon", Json::Num(e));
    }
    echo.push("levels", Json::Int(levels as i64));
    let mut run = RunOutput::new("perfectness", echo);

    let (report, grid, candidates, mode, eps_used) = if tree_mode {
        let tb = core(TreeBoundary::build(&s, &f, depth, epsilon))?;
        let grid = match &args.grid {
            Some(g) => parse_f64_list(g, "grid")?,
            None => (1..=levels.min(depth.saturating_sub(1)))
                .map(|l| tb.distance_at_level(l))
                .collect(),
        };
        let candidates = match &args.candidates {
            Some(c) => parse_f64_list(c, "candidates")?,
            None => {
                // Largest one-level distance ratio and its powers. A grid of
                // level distances cannot certify constants below that ratio,
                // so it is the smallest honest candidate. When the sphere
                // growth ratio (exact, rational) sits at or above it, prefer
                // that: the canonical constant for a branching tree, free of
                // quadrature noise.
                let b = (0..depth)
                    .map(|l| tb.distance_at_level(l) / tb.distance_at_level(l + 1))
                    .fold(1.0f64, f64::max);
                let sizes = s.sphere_sizes();
                let beta = sizes
                    .windows(2)
                    .skip(1)
                    .map(|w| w[1] as f64 / w[0] as f64)
                    .fold(1.0f64, f64::max);
                let base = if beta > 1.0 && beta >= b * (1.0 - 1e-6) { beta } else { b };
                vec![base, base * base, base * base * base]
            }
        };
        let report = core(tb.perfectness_scan(&grid, &candidates))?;
        (report, grid, candidates, "tree", tb.epsilon())
    } else {
        let built = build_atlas(
            ctx,
            &s,
            &f,
            &BoundaryArgs {
                space: args.space.clone(),
                kappa: args.kappa.clone(),
                depth: Some(depth),
                count: args.count,
                epsilon: args.epsilon,
                frink: false,
            },
        )?;
        let qm = core(built.atlas.visual_quasimetric())?;
        // Radii between the sample's occupied distance levels fail at any
        // candidate, so the default grid sits on the levels themselves,
        // starting where every point has a neighbor in range.
        let occupied = occupied_levels(&qm);
        let grid = match &args.grid {
            Some(g) => parse_f64_list(g, "grid")?,
            None => thin_levels(&occupied, levels.max(2) as usize),
        };
        let candidates = match &args.candidates {
            Some(c) => parse_f64_list(c, "candidates")?,
            None => {
                // A grid on occupied levels cannot certify below the gap
                // between them, so the level ratio floors the candidate.
                let mut b0 = 1.0f64;
                for w in occupied.windows(2) {
                    b0 = b0.max(w[1] / w[0]);
                }
                let b = shell_constant(&qm, &grid).max(b0 * (1.0 + 1e-9));
                vec![b, b * b, b * b * b]
            }
        };
        let report = core(uniform_perfectness_scan(&qm, &grid, &candidates))?;
        (report, grid, candidates, "atlas", built.atlas.epsilon())
    };

    run.artifact(
        "perfectness.json",
        perfectness_json(&report, &grid, &candidates, mode, eps_used, depth).render(),
    );
    match report.s {
        Some(sv) => run.line(format!("S = {}", sig12(sv))),
        None => {
            if report.degenerate {
                run.line("degenerate boundary: scan passed vacuously".to_string());
            } else {
                run.line(format!(
                    "no uniform perfectness constant among {} candidates",
                    candidates.len()
                ));
                run.ok = false;
            }
        }
    }
    Ok(run)
}

/// Distinct positive distance values in the sample, sorted ascending.
/// Radii between them test nothing new, so they make the whole grid.
fn occupied_levels(qm: &QuasiMetric) -> Vec<f64> {
    let n = qm.len();
    let mut vals: Vec<f64> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = qm.at(i, j);
            if d > 0.0 {
                vals.push(d);
            }
        }
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    vals.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * *b);
    vals
}

/// At most `want` of the sorted levels, keeping both ends.
fn thin_levels(levels: &[f64], want: usize) -> Vec<f64> {
    if levels.len() <= want || want < 2 {
        return levels.to_vec();
    }
    (0..want)
        .map(|i| levels[i * (levels.len() - 1) / (want - 1)])
        .collect()
}

/// Smallest shell constant the sample satisfies on this grid: max over
/// points and radii of r over the largest in-range distance.
fn shell_constant(qm: &QuasiMetric, grid: &[f64]) -> f64 {
    let n = qm.len();
    let mut need = 1.0f64;
    for i in 0..n {
        for &r in grid {
            let mut best = 0.0f64;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = qm.at(i, j);
                if d <= r * (1.0 + 1e-9) && d > best {
                    best = d;
                }
            }
            if best > 0.0 {
                need = need.max(r / best);
            }
        }
    }
    need * (1.0 + 1e-9)
}

fn perfectness_json(
    report: &PerfectnessReport,
    grid: &[f64],
    candidates: &[f64],
    mode: &str,
    epsilon: f64,
    depth: u32,
) -> Json {
    let mut j = Json::obj();
    j.push("mode", jstr(mode));
    j.push("depth", Json::Int(depth as i64));
    j.push("epsilon", Json::Num(epsilon));
    j.push("grid", jnums(grid));
    j.push("candidates", jnums(candidates));
    match report.s {
        Some(sv) => j.push("s", Json::Num(sv)),
        None => j.push("s", Json::Null),
    };
    let mut attempts = Vec::new();
    for a in &report.attempts {
        let mut aj = Json::obj();
        aj.push("s", Json::Num(a.s));
        aj.push("failures", Json::Int(a.failures as i64));
        match a.first_failure {
            Some((i, r)) => {
                let mut fj = Json::obj();
                fj.push("point", Json::Int(i as i64));
                fj.push("radius", Json::Num(r));
                aj.push("first_failure", fj)
            }
            None => aj.push("first_failure", Json::Null),
        };
        attempts.push(aj);
    }
    j.push("attempts", Json::Arr(attempts));
    j.push("degenerate", Json::Bool(report.degenerate));
    j.push("resolution", Json::Num(report.resolution));
    j.push("diameter", Json::Num(report.diameter));
    j
}

// ---------------------------------------------------------------------------
// dimension

#[derive(Debug, Args)]
pub struct DimensionArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Distance matrix CSV instead of a boundary
    #[arg(long)]
    pub matrix: Option<String>,
    /// Middle-thirds set level instead of a boundary
    #[arg(long)]
    pub cantor: Option<u32>,
    /// Boundary depth in tree mode (default: trusted radius; sizes the
    /// ball when no --radius is given)
    #[arg(long)]
    pub depth: Option<u32>,
    /// Visual parameter in tree mode
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Tree mode: level pairs `j:k`, comma separated
    #[arg(long)]
    pub level_pairs: Option<String>,
    /// Matrix modes: scale pairs `R:r`, comma separated
    #[arg(long)]
    pub scale_pairs: Option<String>,
    /// Box-counting radii, comma separated (matrix modes)
    #[arg(long)]
    pub radii: Option<String>,
    /// Also report the dimension bound from a perfectness constant
    #[arg(long)]
    pub from_s: Option<f64>,
    /// Leaf stride in tree mode (default: scaled to about 512 leaves)
    #[arg(long)]
    pub stride: Option<u64>,
}

pub fn dimension(ctx: &Ctx, args: &DimensionArgs) -> CliResult<RunOutput> {
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let f = build_kappa(&rk)?;

    let mut echo = Json::obj();
    echo.push("kappa", kappa_echo(&rk));
    let mut j = Json::obj();
    let mut lines = Vec::new();
    let mut samples_table = Table::new(&["R", "r", "count"]);

    let report;
    let mut box_dim = None;
    if let Some(path) = &args.matrix {
        echo.push("matrix", jstr(path));
        let (n, entries) = load_matrix(path)?;
        let ms = core(FiniteMetricSpace::from_matrix(n, entries))?;
        let (rep, bd) = matrix_dimension(&ms, args)?;
        report = rep;
        box_dim = bd;
        j.push("mode", jstr("matrix"));
        j.push("n", Json::Int(n as i64));
    } else if let Some(level) = args.cantor {
        echo.push("cantor", Json::Int(level as i64));
        let ms = core(FiniteMetricSpace::from_points_1d(&cantor_points(level)))?;
        let (rep, bd) = matrix_dimension(&ms, args)?;
        report = rep;
        box_dim = bd;
        j.push("mode", jstr("cantor"));
        j.push("n", Json::Int(ms.len() as i64));
    } else {
        let (rs, s) = build_space_for_depth(ctx, &args.space, args.depth, false)?;
        echo.push("space", space_echo(&rs, &s));
        let depth = args.depth.unwrap_or_else(|| s.trusted_radius());
        let epsilon = ctx.f64_param(args.epsilon, "epsilon")?;
        let tb = core(TreeBoundary::build(&s, &f, depth, epsilon))?;
        let pairs: Vec<(u32, u32)> = match &args.level_pairs {
            Some(text) => parse_level_pairs(text)?,
            None => (1..depth).map(|k| (0, k)).collect(),
        };
        let stride = args
            .stride
            .map(|s| s as usize)
            .unwrap_or_else(|| (tb.len() / 512).max(1));
        let samples = core(tb.covering_samples(&pairs, stride))?;
        report = core(lower_assouad_from_samples(&samples))?;
        j.push("mode", jstr("tree"));
        j.push("depth", Json::Int(depth as i64));
        j.push("epsilon", Json::Num(tb.epsilon()));
        j.push("leaves", Json::Int(tb.len() as i64));
        j.push("stride", Json::Int(stride as i64));
    }

    for (i, &(big_r, r)) in report.pairs.iter().enumerate() {
        samples_table.row(&[sig12(big_r), sig12(r), report.counts[i].to_string()]);
    }
    j.push("s", Json::Num(report.s));
    j.push("c", Json::Num(report.c));
    lines.push(format!(
        "lower dimension estimate s = {} (c = {}) from {} scale pairs",
        sig12(report.s),
        sig12(report.c),
        report.pairs.len()
    ));
    if let Some(bd) = box_dim {
        j.push("box_dimension", Json::Num(bd));
        lines.push(format!("box-counting dimension {}", sig12(bd)));
    }
    if let Some(sv) = args.from_s {
        let ub = core(up_dimension_bound(sv))?;
        let mut uj = Json::obj();
        uj.push("s", Json::Num(sv));
        uj.push("bound", Json::Num(ub));
        j.push("up_bound", uj);
        lines.push(format!(
            "uniform perfectness S = {} forces dimension >= {}",
            sig12(sv),
            sig12(ub)
        ));
    }

    let mut run = RunOutput::new("dimension", echo);
    run.artifact("dimension.json", j.render());
    run.artifact("covering.csv", samples_table.render());
    for l in lines {
        run.line(l);
    }
    Ok(run)
}

fn matrix_dimension(
    ms: &FiniteMetricSpace,
    args: &DimensionArgs,
) -> CliResult<(subatlas_core::metric_analysis::DimensionReport, Option<f64>)> {
    let diam = ms.diameter();
    let res = ms.min_positive();
    let pairs: Vec<(f64, f64)> = match &args.scale_pairs {
        Some(text) => parse_scale_pairs(text)?,
        None => {
            // The fit wants ratios spanning two decades; walk from 3x
            // down to the resolution, capped at 2000x.
            let rmax = (diam / res).min(2000.0);
            if rmax < 300.0 {
                return err("space too shallow for default scale pairs; pass --scale-pairs R:r,...");
            }
            scale_grid(3.0, rmax, 5)
                .iter()
                .map(|&t| (diam, diam / t))
                .collect()
        }
    };
    if pairs.len() < 2 {
        return err("too few usable scale pairs; pass --scale-pairs R:r,...");
    }
    let report = core(lower_assouad_estimate(ms, &pairs))?;
    let radii = match &args.radii {
        Some(text) => parse_f64_list(text, "radii")?,
        None => scale_grid((diam / 200.0).max(res * 1.5), diam / 2.0, 6),
    };
    let bd = core(box_dimension(ms, &radii))?;
    Ok((report, Some(bd)))
}

fn parse_level_pairs(text: &str) -> CliResult<Vec<(u32, u32)>> {
    text.split(',')
        .map(|p| {
            let (j, k) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| ConfigError(format!("bad level pair `{p}`, want j:k")))?;
            let parse = |s: &str| {
                s.parse::<u32>()
                    .map_err(|_| ConfigError(format!("bad level `{s}`")))
            };
            Ok((parse(j)?, parse(k)?))
        })
        .collect()
}

fn parse_scale_pairs(text: &str) -> CliResult<Vec<(f64, f64)>> {
    text.split(',')
        .map(|p| {
            let (big_r, r) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| ConfigError(format!("bad scale pair `{p}`, want R:r")))?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| ConfigError(format!("bad scale `{s}`")))
            };
            Ok((parse(big_r)?, parse(r)?))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// warp

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Distance matrix CSV
    #[arg(long)]
    pub matrix: Option<String>,
    /// Middle-thirds set level
    #[arg(long)]
    pub cantor: Option<u32>,
    /// Visual parameter of the warp
    #[arg(long)]
    pub eps_vis: Option<f64>,
    /// Scale divisor inside the warp
    #[arg(long)]
    pub scale_a: Option<f64>,
    /// Doubling-audit grid, comma separated
    #[arg(long)]
    pub t_grid: Option<String>,
}

pub fn warp(ctx: &Ctx, args: &WarpArgs) -> CliResult<RunOutput> {
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let f = build_kappa(&rk)?;
    let eps = ctx.f64_param(args.eps_vis, "eps_vis")?.unwrap_or(1.0);
    let a = ctx.f64_param(args.scale_a, "scale_a")?.unwrap_or(1.0);
    let ms = load_analysis_space(args.matrix.as_deref(), args.cantor)?;
    let outcome = core(warp_metric(&ms, &f, eps, a))?;
    let t_grid = match &args.t_grid {
        Some(t) => parse_f64_list(t, "t-grid")?,
        None => scale_grid(1e-6, 1.0, 25),
    };
    let doubling = core(warp_doubling_constant(&f, eps, a, &t_grid))?;

    let mut echo = Json::obj();
    echo.push("kappa", kappa_echo(&rk));
    match (&args.matrix, args.cantor) {
        (Some(p), _) => echo.push("matrix", jstr(p)),
        (None, Some(l)) => echo.push("cantor", Json::Int(l as i64)),
        _ => unreachable!("load_analysis_space validated the source"),
    };
    echo.push("eps_vis", Json::Num(eps));
    echo.push("scale_a", Json::Num(a));
    let mut run = RunOutput::new("warp", echo);

    let mut j = Json::obj();
    j.push("n", Json::Int(ms.len() as i64));
    j.push("eps_vis", Json::Num(eps));
    j.push("scale_a", Json::Num(a));
    match outcome.rescaled_by {
        Some(d) => j.push("rescaled_by", Json::Num(d)),
        None => j.push("rescaled_by", Json::Null),
    };
    j.push("quasi_constant", Json::Num(outcome.quasi_constant));
    j.push("doubling_bound", Json::Num(doubling));
    run.artifact("warp.json", j.render());
    if outcome.space.len() <= 512 {
        let n = outcome.space.len();
        let mut out = String::new();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|jx| sig12(outcome.space.at(i, jx))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        run.artifact("warped_matrix.csv", out);
    }
    run.line(format!(
        "warped {} points: quasi-triangle constant {}, doubling bound {}",
        ms.len(),
        sig12(outcome.quasi_constant),
        sig12(doubling)
    ));
    Ok(run)
}

fn load_analysis_space(matrix: Option<&str>, cantor: Option<u32>) -> CliResult<FiniteMetricSpace> {
    match (matrix, cantor) {
        (Some(path), None) => {
            let (n, entries) = load_matrix(path)?;
            core(FiniteMetricSpace::from_matrix(n, entries))
        }
        (None, Some(level)) => core(FiniteMetricSpace::from_points_1d(&cantor_points(level))),
        _ => err("pass exactly one of --matrix or --cantor"),
    }
}

// ---------------------------------------------------------------------------
// distortion

#[derive(Debug, Args)]
pub struct DistortionArgs {
    /// Source distance matrix CSV
    #[arg(long)]
    pub matrix_a: Option<String>,
    /// Target distance matrix CSV
    #[arg(long)]
    pub matrix_b: Option<String>,
    /// Middle-thirds set level; target is the source snowflaked
    #[arg(long)]
    pub cantor: Option<u32>,
    /// Snowflake exponent used with --cantor
    #[arg(long)]
    pub power: Option<f64>,
    /// Ratio grid, comma separated
    #[arg(long)]
    pub t_grid: Option<String>,
    /// Modulus constant to audit against
    #[arg(long)]
    pub eta_c: Option<f64>,
}

pub fn distortion(ctx: &Ctx, args: &DistortionArgs) -> CliResult<RunOutput> {
    let mut echo = Json::obj();
    let (ms1, ms2) = match (&args.matrix_a, &args.matrix_b, args.cantor) {
        (Some(pa), Some(pb), None) => {
            echo.push("matrix_a", jstr(pa));
            echo.push("matrix_b", jstr(pb));
            let (na, ea) = load_matrix(pa)?;
            let (nb, eb) = load_matrix(pb)?;
            (
                core(FiniteMetricSpace::from_matrix(na, ea))?,
                core(FiniteMetricSpace::from_matrix(nb, eb))?,
            )
        }
        (None, None, Some(level)) => {
            let p = ctx.f64_param(args.power, "power")?.unwrap_or(0.5);
            echo.push("cantor", Json::Int(level as i64));
            echo.push("power", Json::Num(p));
            let ms1 = core(FiniteMetricSpace::from_points_1d(&cantor_points(level)))?;
            let snow: Vec<f64> = ms1.entries().iter().map(|&d| d.powf(p)).collect();
            let ms2 = core(FiniteMetricSpace::from_matrix(ms1.len(), snow))?;
            (ms1, ms2)
        }
        _ => return err("pass --matrix-a with --matrix-b, or --cantor"),
    };
    let t_grid = match &args.t_grid {
        Some(t) => parse_f64_list(t, "t-grid")?,
        None => scale_grid(0.05, 1.0, 12),
    };
    let eta_c = ctx.f64_param(args.eta_c, "eta_c")?;
    let profile = core(qs_distortion(&ms1, &ms2, &t_grid, eta_c, ctx.seed))?;

    echo.push("t_grid", jnums(&t_grid));
    if let Some(c) = eta_c {
        echo.push("eta_c", Json::Num(c));
    }
    echo.push("seed", Json::Int(ctx.seed as i64));
    let mut run = RunOutput::new("distortion", echo);

    let mut table = Table::new(&["t", "h", "eta"]);
    for (i, &t) in profile.t_grid.iter().enumerate() {
        let eta = profile
            .eta
            .as_ref()
            .map(|e| sig12(e[i]))
            .unwrap_or_default();
        table.row(&[sig12(t), sig12(profile.h[i]), eta]);
    }
    let mut j = Json::obj();
    j.push("n", Json::Int(ms1.len() as i64));
    j.push("t_grid", jnums(&profile.t_grid));
    j.push("h", jnums(&profile.h));
    match &profile.eta {
        Some(e) => j.push("eta", jnums(e)),
        None => j.push("eta", Json::Null),
    };
    j.push("exceeds_eta", Json::Bool(profile.exceeds_eta));
    j.push("exhaustive", Json::Bool(profile.exhaustive));
    run.artifact("distortion.json", j.render());
    run.artifact("distortion.csv", table.render());
    let worst = profile.h.iter().cloned().fold(0.0f64, f64::max);
    run.line(format!(
        "distortion over {} ratios: max H = {}{} ({})",
        profile.t_grid.len(),
        sig12(worst),
        if profile.exceeds_eta {
            ", EXCEEDS the audited modulus"
        } else {
            ""
        },
        if profile.exhaustive { "exhaustive" } else { "sampled" }
    ));
    Ok(run)
}

// ---------------------------------------------------------------------------
// subdivide

#[derive(Debug, Args)]
pub struct SubdivideArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Geodesic start vertex (default: basepoint)
    #[arg(long)]
    pub from: Option<u32>,
    /// Geodesic end vertex (default: a deepest vertex)
    #[arg(long)]
    pub to: Option<u32>,
}

pub fn subdivide(ctx: &Ctx, args: &SubdivideArgs) -> CliResult<RunOutput> {
    let rs = resolve_space(ctx, &args.space)?;
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let s = build_space(&rs)?;
    let f = build_kappa(&rk)?;
    let from = args.from.unwrap_or(s.basepoint());
    let to = args.to.unwrap_or_else(|| deepest_vertex(&s));
    let z = core(s.geodesic(from, to))?;
    let waypoints = core(kappa_subdivision(&s, &f, &z))?;

    let mut echo = Json::obj();
    echo.push("space", space_echo(&rs, &s));
    echo.push("kappa", kappa_echo(&rk));
    echo.push("from", Json::Int(from as i64));
    echo.push("to", Json::Int(to as i64));
    let mut run = RunOutput::new("subdivide", echo);

    let verts = z.vertices();
    let pos: Vec<usize> = waypoints
        .iter()
        .map(|w| verts.iter().position(|v| v == w).expect("waypoints lie on the path"))
        .collect();
    let mut table = Table::new(&["idx", "vertex", "depth", "gap_to_next"]);
    let mut max_gap = 0usize;
    let mut gaps_ok = true;
    for (i, &w) in waypoints.iter().enumerate() {
        let gap = if i + 1 < waypoints.len() {
            pos[i + 1] - pos[i]
        } else {
            0
        };
        if i + 1 < waypoints.len() {
            max_gap = max_gap.max(gap);
            if gap as f64 > f.eval(s.depth(w) as f64) + 1e-9 {
                gaps_ok = false;
            }
        }
        table.row(&[
            i.to_string(),
            w.to_string(),
            s.depth(w).to_string(),
            gap.to_string(),
        ]);
    }
    let mut j = Json::obj();
    j.push("from", Json::Int(from as i64));
    j.push("to", Json::Int(to as i64));
    j.push("length", Json::Int(z.length() as i64));
    j.push("waypoints", Json::Int(waypoints.len() as i64));
    j.push("max_gap", Json::Int(max_gap as i64));
    j.push("gaps_within_kappa", Json::Bool(gaps_ok));
    run.artifact("subdivision.json", j.render());
    run.artifact("subdivision.csv", table.render());
    run.ok = gaps_ok;
    run.line(format!(
        "subdivided a length-{} geodesic into {} waypoints, max gap {}",
        z.length(),
        waypoints.len(),
        max_gap
    ));
    Ok(run)
}

// ---------------------------------------------------------------------------
// sbe-estimate

#[derive(Debug, Args)]
pub struct SbeEstimateArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub codomain: CodomainArgs,
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Vertex map: identity | labels[:c=ab,...] | a CSV of x_id,y_id rows
    #[arg(long)]
    pub map: Option<String>,
    /// Reverse vertex map for the round-trip audit (same grammar)
    #[arg(long)]
    pub inverse_map: Option<String>,
    /// Pair budget when the domain is too large to enumerate
    #[arg(long)]
    pub pair_samples: Option<u64>,
}

fn parse_map_spec(
    spec: &str,
    domain: &PointedSpace,
    codomain: &PointedSpace,
) -> CliResult<CorrespondenceMap> {
    if spec == "identity" {
        let table: Vec<u32> = (0..domain.vertex_count() as u32).collect();
        return core(CorrespondenceMap::new(domain, codomain, table));
    }
    if spec == "labels" || spec.starts_with("labels:") {
        let rewrites: Vec<(char, String)> = match spec.strip_prefix("labels:") {
            None | Some("") => Vec::new(),
            Some(list) => list
                .split(',')
                .map(|rw| {
                    let (ch, word) = rw
                        .split_once('=')
                        .ok_or_else(|| ConfigError(format!("bad rewrite `{rw}`, want c=ab")))?;
                    let mut chars = ch.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => Ok((c, word.to_string())),
                        _ => err(format!("bad rewrite letter `{ch}`")),
                    }
                })
                .collect::<CliResult<_>>()?,
        };
        let borrowed: Vec<(char, &str)> =
            rewrites.iter().map(|(c, w)| (*c, w.as_str())).collect();
        return core(correspondence_by_labels(domain, codomain, &borrowed));
    }
    let table = load_vertex_map(spec, domain.vertex_count())?;
    core(CorrespondenceMap::new(domain, codomain, table))
}

fn residual_rows(residuals: &[PairResidual]) -> (Json, Table) {
    let mut arr = Vec::new();
    let mut table = Table::new(&["x", "x2", "dx", "dy", "scale", "gap"]);
    for r in residuals {
        let mut j = Json::obj();
        j.push("x", Json::Int(r.x as i64));
        j.push("x2", Json::Int(r.x2 as i64));
        j.push("dx", Json::Int(r.dx as i64));
        j.push("dy", Json::Int(r.dy as i64));
        j.push("scale", Json::Num(r.scale));
        j.push("gap", Json::Num(r.gap));
        arr.push(j);
        table.row(&[
            r.x.to_string(),
            r.x2.to_string(),
            r.dx.to_string(),
            r.dy.to_string(),
            sig12(r.scale),
            sig12(r.gap),
        ]);
    }
    (Json::Arr(arr), table)
}

fn defect_json(d: &InverseDefect) -> Json {
    let mut j = Json::obj();
    j.push("defect", Json::Num(d.defect));
    j.push("excluded", Json::Int(d.excluded as i64));
    j.push("capped", Json::Bool(d.capped));
    j.push("flagged", Json::Bool(d.flagged));
    match d.worst_vertex {
        Some(v) => j.push("worst_vertex", Json::Int(v as i64)),
        None => j.push("worst_vertex", Json::Null),
    };
    j
}

pub fn sbe_estimate(ctx: &Ctx, args: &SbeEstimateArgs) -> CliResult<RunOutput> {
    let rs = resolve_space(ctx, &args.space)?;
    let rc = resolve_codomain(&args.codomain)?;
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let x = build_space(&rs)?;
    let y = build_space(&rc)?;
    let f = build_kappa(&rk)?;
    let map_spec = match ctx.str_param(args.map.clone(), "map")? {
        Some(m) => m,
        None => return err("pass --map identity | labels[:rewrites] | <csv>"),
    };
    let fmap = parse_map_spec(&map_spec, &x, &y)?;
    let pair_samples = ctx.u64_param(args.pair_samples, "pair_samples")?.unwrap_or(4000) as usize;

    let mut echo = Json::obj();
    echo.push("domain", space_echo(&rs, &x));
    echo.push("codomain", space_echo(&rc, &y));
    echo.push("kappa", kappa_echo(&rk));
    echo.push("map", jstr(&map_spec));
    echo.push("pair_samples", Json::Int(pair_samples as i64));
    echo.push("seed", Json::Int(ctx.seed as i64));
    let mut run = RunOutput::new("sbe-estimate", echo);

    match estimate_sbe(&x, &y, &fmap, &f, pair_samples, ctx.seed) {
        Ok(est) => {
            let (res_json, res_table) = residual_rows(&est.residuals);
            let mut j = Json::obj();
            j.push("k", Json::Num(est.k));
            j.push("a", Json::Num(est.a));
            j.push("b", Json::Num(est.b));
            j.push("surjectivity_defect", Json::Num(est.surjectivity_defect));
            j.push("pairs_checked", Json::Int(est.pairs_checked as i64));
            j.push("exhaustive", Json::Bool(est.exhaustive));
            j.push("strictly_sublinear", Json::Bool(est.strictly_sublinear));
            j.push("residuals", res_json);
            run.artifact("sbe.json", j.render());
            run.artifact("residuals.csv", res_table.render());
            run.line(format!(
                "additive-error fit: K = {}, u(t) = {} kappa(t) + {} over {} pairs ({})",
                sig12(est.k),
                sig12(est.a),
                sig12(est.b),
                est.pairs_checked,
                if est.exhaustive { "exhaustive" } else { "sampled" }
            ));
            run.line(format!(
                "surjectivity defect {}, strictly sublinear scale: {}",
                sig12(est.surjectivity_defect),
                est.strictly_sublinear
            ));
            if let Some(inv_spec) = &args.inverse_map {
                let gmap = parse_map_spec(inv_spec, &y, &x)?;
                let there = core(coarse_inverse_defect(&x, &y, &fmap, &gmap, &f, &est))?;
                let back = core(coarse_inverse_defect(&y, &x, &gmap, &fmap, &f, &est))?;
                let mut ij = Json::obj();
                ij.push("round_trip_domain", defect_json(&there));
                ij.push("round_trip_codomain", defect_json(&back));
                run.artifact("inverse.json", ij.render());
                run.line(format!(
                    "round trips: domain defect {}{}, codomain defect {}{}",
                    sig12(there.defect),
                    if there.flagged { " (FLAGGED)" } else { "" },
                    sig12(back.defect),
                    if back.flagged { " (FLAGGED)" } else { "" }
                ));
                if there.flagged || back.flagged {
                    run.ok = false;
                }
            }
        }
        Err(SbeError::NoFiniteFit { a_cap, worst }) => {
            let (res_json, res_table) = residual_rows(&worst);
            let mut j = Json::obj();
            j.push("a_cap", Json::Num(a_cap));
            j.push("worst", res_json);
            run.artifact("sbe_failure.json", j.render());
            run.artifact("residuals.csv", res_table.render());
            run.line(format!(
                "no admissible fit: the kappa coefficient would exceed {}",
                sig12(a_cap)
            ));
            run.ok = false;
        }
        Err(e) => return Err(ConfigError(e.to_string())),
    }
    Ok(run)
}

// ---------------------------------------------------------------------------
// extend

#[derive(Debug, Args)]
pub struct ExtendArgs {
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub codomain: CodomainArgs,
    #[command(flatten)]
    pub kappa: KappaArgs,
    /// Boundary depth for both atlases (default: smaller trusted radius)
    #[arg(long)]
    pub depth: Option<u32>,
    /// Directions per atlas (default: full spheres)
    #[arg(long)]
    pub count: Option<u64>,
    /// Visual parameter for both atlases
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Direction matching: identity | a CSV of i,j rows
    #[arg(long)]
    pub matching: Option<String>,
    /// Center slack K
    #[arg(long)]
    pub k: Option<f64>,
    /// Balance defect budget
    #[arg(long)]
    pub c_bal: Option<f64>,
}

pub fn extend(ctx: &Ctx, args: &ExtendArgs) -> CliResult<RunOutput> {
    let rs = resolve_space(ctx, &args.space)?;
    let rc = resolve_codomain(&args.codomain)?;
    let rk = resolve_kappa(ctx, &args.kappa)?;
    let x = build_space(&rs)?;
    let y = build_space(&rc)?;
    let f = build_kappa(&rk)?;
    let depth = args
        .depth
        .unwrap_or_else(|| x.trusted_radius().min(y.trusted_radius()));
    let count = ctx.u64_param(args.count, "count")?.map(|c| c as usize);
    let epsilon = ctx.f64_param(args.epsilon, "epsilon")?;
    let k = ctx.f64_param(args.k, "k")?.unwrap_or(0.0);
    let c_bal = ctx.f64_param(args.c_bal, "c_bal")?.unwrap_or(2.0);

    let sample_x = core(sample_boundary(&x, &f, depth, count, ctx.seed))?;
    let sample_y = core(sample_boundary(&y, &f, depth, count, ctx.seed.wrapping_add(1)))?;
    let atlas_x = core(BoundaryAtlas::build(&x, &f, sample_x.points, epsilon))?;
    let atlas_y = core(BoundaryAtlas::build(&y, &f, sample_y.points, epsilon))?;
    if atlas_x.len() != atlas_y.len() {
        return err(format!(
            "atlases have {} and {} directions; pass --count or a matching CSV for equal sizes",
            atlas_x.len(),
            atlas_y.len()
        ));
    }
    let matching = match ctx.str_param(args.matching.clone(), "matching")?.as_deref() {
        None | Some("identity") => (0..atlas_x.len()).collect(),
        Some(path) => load_matching(path, atlas_x.len())?,
    };
    let outcome = core(boundary_extension(
        &x, &y, &atlas_x, &atlas_y, &matching, &f, k, c_bal,
    ))?;

    let mut echo = Json::obj();
    echo.push("domain", space_echo(&rs, &x));
    echo.push("codomain", space_echo(&rc, &y));
    echo.push("kappa", kappa_echo(&rk));
    echo.push("depth", Json::Int(depth as i64));
    echo.push("k", Json::Num(k));
    echo.push("c_bal", Json::Num(c_bal));
    echo.push("seed", Json::Int(ctx.seed as i64));
    let mut run = RunOutput::new("extend", echo);

    let mut map_csv = Table::new(&["x_id", "y_id"]);
    for (xv, &yv) in outcome.map.table().iter().enumerate() {
        map_csv.row(&[xv.to_string(), yv.to_string()]);
    }
    let mut defects = Table::new(&["x", "depth", "covered", "defect", "spread"]);
    let uncovered: std::collections::BTreeSet<u32> = outcome.uncovered.iter().copied().collect();
    let mut defect_max = 0.0f64;
    let mut defect_sum = 0.0f64;
    let mut defect_count = 0usize;
    let mut spread_max = 0.0f64;
    let mut trusted_total = 0usize;
    for v in 0..x.vertex_count() as u32 {
        if x.depth(v) > x.trusted_radius() {
            continue;
        }
        trusted_total += 1;
        let covered = !uncovered.contains(&v);
        let d = outcome.defects[v as usize];
        let sp = outcome.spreads[v as usize];
        if let Some(dv) = d {
            defect_max = defect_max.max(dv);
            defect_sum += dv;
            defect_count += 1;
        }
        if let Some(sv) = sp {
            spread_max = spread_max.max(sv);
        }
        defects.row(&[
            v.to_string(),
            x.depth(v).to_string(),
            covered.to_string(),
            d.map(sig12).unwrap_or_default(),
            sp.map(sig12).unwrap_or_default(),
        ]);
    }
    let mut j = Json::obj();
    j.push("directions", Json::Int(atlas_x.len() as i64));
    j.push("depth", Json::Int(depth as i64));
    j.push("k", Json::Num(k));
    j.push("c_bal", Json::Num(c_bal));
    j.push("trusted_total", Json::Int(trusted_total as i64));
    j.push(
        "covered",
        Json::Int((trusted_total - outcome.uncovered.len()) as i64),
    );
    j.push("uncovered_count", Json::Int(outcome.uncovered.len() as i64));
    j.push(
        "uncovered",
        Json::Arr(
            outcome
                .uncovered
                .iter()
                .take(100)
                .map(|&v| Json::Int(v as i64))
                .collect(),
        ),
    );
    j.push("defect_max", Json::Num(defect_max));
    j.push(
        "defect_mean",
        Json::Num(if defect_count > 0 {
            defect_sum / defect_count as f64
        } else {
            0.0
        }),
    );
    j.push("spread_max", Json::Num(spread_max));
    run.artifact("extension_report.json", j.render());
    run.artifact("extension_map.csv", map_csv.render());
    run.artifact("extension_defects.csv", defects.render());
    run.line(format!(
        "extended a {}-direction matching: {}/{} trusted vertices covered, max defect {}, max spread {}",
        atlas_x.len(),
        trusted_total - outcome.uncovered.len(),
        trusted_total,
        sig12(defect_max),
        sig12(spread_max)
    ));
    Ok(run)
}

//! Finite boundary atlases: canonical rays to a fixed sphere, scaled Gromov
//! products, visual quasimetrics, Frink metrization, and uniform
//! perfectness scans.
//!
//! A boundary point is a canonical geodesic ray from the basepoint to a
//! sphere vertex. Two rays whose product exceeds rho(depth) - 1 track each
//! other all the way to the sphere and are merged during sampling. Products
//! are reported on the rho scale, so distances exp(-eps * product) compare
//! across scale functions. Unit trees get a dedicated [`TreeBoundary`] that
//! answers products, perfectness, and covering counts through ancestor
//! walks instead of an n x n matrix, which keeps full spheres with tens of
//! thousands of rays affordable.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::{RngCore, SeedableRng};

use crate::kappa::{KappaError, RhoCache, SublinearFunction};
use crate::numeric;
use crate::space::{Path, PointedSpace, SpaceError};

/// Slack added to the merge threshold rho(depth) - 1, so rays at exactly
/// the threshold survive. Full regular spheres sit exactly there.
pub const DEDUP_SLACK: f64 = 1e-12;
/// Hard cap on dense atlases; the product matrix is n x n.
pub const ATLAS_POINT_MAX: usize = 2048;
/// Hard cap for cubic scans: quasi-triangle constants, fourpoint defects,
/// and chain metrization all visit every triple.
pub const CUBIC_POINT_MAX: usize = 1200;
/// Relative slack when testing shell membership r/S < d <= r, to keep
/// spectra like 3^-k stable against rounding in exp/ln.
pub const SHELL_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryError {
    /// Requested sphere lies outside the trusted part of the ball.
    DepthTooLarge { depth: u32, trusted: u32 },
    /// More points than the dense or cubic routines can hold.
    TooManyPoints { have: usize, max: usize },
    /// Fewer than two usable points.
    NotEnoughPoints,
    /// Products of a boundary point with itself are not defined.
    IdenticalEndpoints,
    /// Epsilon (or a Holder exponent) must be positive and finite.
    BadEpsilon,
    /// scale_radius needs 0 < r <= 1 and a finite bookkeeping constant >= 0.
    BadRadius,
    /// A ray fails the boundary-point invariants for this space.
    BadRay { reason: &'static str },
    /// Atlas points must all sit on one sphere.
    MixedDepths,
    /// A supplied matrix is not a quasimetric.
    BadMatrix { reason: &'static str },
    /// Chain metrization requires quasi-triangle constant <= 2; rebuild the
    /// quasimetric with a smaller epsilon.
    ConstantTooLarge { constant: f64 },
    /// The chain metric dropped below a quarter of the quasimetric.
    SandwichViolated { ratio: f64 },
    /// Perfectness scan radii must lie within [resolution, diameter].
    GridOutOfRange { r: f64, lo: f64, hi: f64 },
    EmptyGrid,
    /// Scale candidates must be finite and exceed 1; covering scales must
    /// be ordered within the atlas depth.
    BadScale { what: &'static str },
    /// The tree-structured boundary needs an unweighted tree ball.
    NotAUnitTree,
    Space(SpaceError),
    Kappa(KappaError),
}

impl core::fmt::Display for BoundaryError {
    fn fmt(&self, fm: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            BoundaryError::DepthTooLarge { depth, trusted } => write!(
                fm,
                "sphere depth {depth} exceeds the trusted radius {trusted}"
            ),
            BoundaryError::TooManyPoints { have, max } => {
                write!(fm, "{have} boundary points exceed the supported {max}")
            }
            BoundaryError::NotEnoughPoints => {
                write!(fm, "need at least two boundary points (and depth >= 1)")
            }
            BoundaryError::IdenticalEndpoints => {
                write!(fm, "products need two distinct endpoints")
            }
            BoundaryError::BadEpsilon => {
                write!(fm, "epsilon must be a positive finite real")
            }
            BoundaryError::BadRadius => {
                write!(fm, "need 0 < r <= 1 and bookkeeping constant >= 0")
            }
            BoundaryError::BadRay { reason } => write!(fm, "bad ray: {reason}"),
            BoundaryError::MixedDepths => {
                write!(fm, "atlas points must share one sphere depth")
            }
            BoundaryError::BadMatrix { reason } => {
                write!(fm, "bad quasimetric matrix: {reason}")
            }
            BoundaryError::ConstantTooLarge { constant } => write!(
                fm,
                "quasi-triangle constant {constant} exceeds 2; rebuild with a smaller epsilon"
            ),
            BoundaryError::SandwichViolated { ratio } => write!(
                fm,
                "chain metric fell to {ratio} of the quarter lower bound"
            ),
            BoundaryError::GridOutOfRange { r, lo, hi } => write!(
                fm,
                "scan radius {r} outside [{lo}, {hi}] set by resolution and diameter"
            ),
            BoundaryError::EmptyGrid => write!(fm, "scan radius grid is empty"),
            BoundaryError::BadScale { what } => write!(fm, "bad scale: {what}"),
            BoundaryError::NotAUnitTree => {
                write!(fm, "tree boundary requires an unweighted tree ball")
            }
            BoundaryError::Space(e) => write!(fm, "space error: {e}"),
            BoundaryError::Kappa(e) => write!(fm, "scale function error: {e}"),
        }
    }
}

impl core::error::Error for BoundaryError {}

impl From<SpaceError> for BoundaryError {
    fn from(e: SpaceError) -> Self {
        BoundaryError::Space(e)
    }
}

impl From<KappaError> for BoundaryError {
    fn from(e: KappaError) -> Self {
        BoundaryError::Kappa(e)
    }
}

// ---------------------------------------------------------------------------
// Boundary points and sampling

/// A canonical geodesic ray from the basepoint to a sphere vertex.
#[derive(Clone, Debug)]
pub struct BoundaryPoint {
    ray: Path,
    depth: u32,
}

impl BoundaryPoint {
    pub fn new(s: &PointedSpace, ray: Path) -> Result<Self, BoundaryError> {
        if ray.first() != s.basepoint() {
            return Err(BoundaryError::BadRay {
                reason: "ray must start at the basepoint",
            });
        }
        let depth = s.depth(ray.last());
        if ray.length() != depth {
            return Err(BoundaryError::BadRay {
                reason: "ray is not a geodesic from the basepoint",
            });
        }
        Ok(BoundaryPoint { ray, depth })
    }

    pub fn ray(&self) -> &Path {
        &self.ray
    }

    pub fn endpoint(&self) -> u32 {
        self.ray.last()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }
}

/// Result of sampling a sphere: rays kept, whether a requested count was
/// clamped to the sphere size, and how many rays the merge step removed.
#[derive(Clone, Debug)]
pub struct BoundarySample {
    pub points: Vec<BoundaryPoint>,
    pub clamped: bool,
    pub merged: usize,
}

/// rho at integer radii 0..=depth, chained so a sweep costs one panel per
/// step. Strictly increasing since kappa is positive.
fn rho_table(f: &SublinearFunction, depth: u32) -> Vec<f64> {
    let mut cache = RhoCache::new(f);
    (0..=depth).map(|d| cache.rho(d as f64)).collect()
}

/// Smallest ancestor depth at which two sphere rays must differ to stay
/// separate points: the first l with rho(l) above the merge threshold.
fn merge_prefix_depth(rho: &[f64], depth: u32) -> u32 {
    let threshold = rho[depth as usize] - 1.0 + DEDUP_SLACK;
    (0..=depth)
        .find(|&l| rho[l as usize] > threshold)
        .unwrap_or(depth)
}

fn ancestor_at(s: &PointedSpace, v: u32, level: u32) -> u32 {
    let mut cur = v;
    while s.depth(cur) > level {
        cur = s
            .canonical_parent(cur)
            .expect("vertex above level has a parent");
    }
    cur
}

/// Keep the first leaf of each depth-lstar ancestor class, in id order.
fn tree_dedup(s: &PointedSpace, sphere: &[u32], lstar: u32) -> (Vec<u32>, usize) {
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    for &v in sphere {
        if seen.insert(ancestor_at(s, v, lstar)) {
            kept.push(v);
        }
    }
    let merged = sphere.len() - kept.len();
    (kept, merged)
}

/// Minimum depth along the canonical geodesic between u and v, given the
/// distance field from v.
fn geodesic_min_depth(
    s: &PointedSpace,
    u: u32,
    v: u32,
    dist_v: &[u32],
) -> Result<u32, BoundaryError> {
    let path = s.geodesic_with_dists(u, v, dist_v)?;
    Ok(path
        .vertices()
        .iter()
        .map(|&x| s.depth(x))
        .min()
        .expect("geodesic is nonempty"))
}

/// Canonical rays from the basepoint to sphere(depth) vertices, merged so
/// that no two kept rays have product above rho(depth) - 1. `count = None`
/// enumerates the sphere; a count larger than the sphere is clamped and
/// flagged. Selection and merging are deterministic in the seed.
pub fn sample_boundary(
    s: &PointedSpace,
    f: &SublinearFunction,
    depth: u32,
    count: Option<usize>,
    seed: u64,
) -> Result<BoundarySample, BoundaryError> {
    if depth == 0 {
        return Err(BoundaryError::NotEnoughPoints);
    }
    if depth > s.trusted_radius() {
        return Err(BoundaryError::DepthTooLarge {
            depth,
            trusted: s.trusted_radius(),
        });
    }
    let sphere = s.sphere(depth);
    let (chosen, clamped) = match count {
        None => (sphere, false),
        Some(0) => return Err(BoundaryError::NotEnoughPoints),
        Some(c) if c >= sphere.len() => {
            let clamped = c > sphere.len();
            (sphere, clamped)
        }
        Some(c) => {
            // Partial Fisher-Yates, then ascending ids for determinism.
            let mut pool = sphere;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for i in 0..c {
                let j = i + (rng.next_u64() as usize) % (pool.len() - i);
                pool.swap(i, j);
            }
            pool.truncate(c);
            pool.sort_unstable();
            (pool, false)
        }
    };

    let rho = rho_table(f, depth);
    let threshold = rho[depth as usize] - 1.0 + DEDUP_SLACK;
    let tree = s.is_tree() && s.is_unit_weight();

    let mut points = Vec::new();
    let merged;
    if tree {
        let lstar = merge_prefix_depth(&rho, depth);
        let (kept, m) = tree_dedup(s, &chosen, lstar);
        merged = m;
        for v in kept {
            points.push(BoundaryPoint {
                ray: parent_walk_ray(s, v)?,
                depth,
            });
        }
    } else {
        if chosen.len() > ATLAS_POINT_MAX {
            return Err(BoundaryError::TooManyPoints {
                have: chosen.len(),
                max: ATLAS_POINT_MAX,
            });
        }
        let mut kept: Vec<u32> = Vec::new();
        let mut fields: Vec<Vec<u32>> = Vec::new();
        for &u in &chosen {
            let mut drop = false;
            for (i, &v) in kept.iter().enumerate() {
                let m = geodesic_min_depth(s, u, v, &fields[i])?;
                if rho[m as usize] > threshold {
                    drop = true;
                    break;
                }
            }
            if !drop {
                fields.push(s.distances_from(u));
                kept.push(u);
            }
        }
        merged = chosen.len() - kept.len();
        for (i, &v) in kept.iter().enumerate() {
            let ray = s.geodesic_with_dists(s.basepoint(), v, &fields[i])?;
            points.push(BoundaryPoint { ray, depth });
        }
    }
    Ok(BoundarySample {
        points,
        clamped,
        merged,
    })
}

fn parent_walk_ray(s: &PointedSpace, v: u32) -> Result<Path, BoundaryError> {
    let mut up = vec![v];
    let mut cur = v;
    while let Some(p) = s.canonical_parent(cur) {
        up.push(p);
        cur = p;
    }
    up.reverse();
    Ok(Path::new(s, up)?)
}

/// rho of the distance from the basepoint to the canonical geodesic between
/// the rays' endpoints. In a tree this is rho of the branch depth.
pub fn gromov_product_kappa(
    s: &PointedSpace,
    f: &SublinearFunction,
    a: &BoundaryPoint,
    b: &BoundaryPoint,
) -> Result<f64, BoundaryError> {
    if a.endpoint() == b.endpoint() {
        return Err(BoundaryError::IdenticalEndpoints);
    }
    let dist_b = s.distances_from(b.endpoint());
    let m = geodesic_min_depth(s, a.endpoint(), b.endpoint(), &dist_b)?;
    Ok(f.rho(m as f64)?.value)
}

// ---------------------------------------------------------------------------
// Dense atlases

/// Boundary points on one sphere with their full product matrix. The
/// diagonal is +infinity by convention (a point is at distance 0 from
/// itself); off-diagonal products never exceed rho(depth).
#[derive(Clone, Debug)]
pub struct BoundaryAtlas {
    points: Vec<BoundaryPoint>,
    depth: u32,
    epsilon: f64,
    rho_depth: f64,
    products: Vec<f64>,
}

impl BoundaryAtlas {
    /// Builds the product matrix for the given points. `epsilon = None`
    /// calibrates exp(eps * C) <= 2 from the measured fourpoint defect C,
    /// as eps = ln 2 / (C + 1).
    pub fn build(
        s: &PointedSpace,
        f: &SublinearFunction,
        points: Vec<BoundaryPoint>,
        epsilon: Option<f64>,
    ) -> Result<Self, BoundaryError> {
        let n = points.len();
        if n < 2 {
            return Err(BoundaryError::NotEnoughPoints);
        }
        if n > ATLAS_POINT_MAX {
            return Err(BoundaryError::TooManyPoints {
                have: n,
                max: ATLAS_POINT_MAX,
            });
        }
        let depth = points[0].depth;
        let mut endpoints = BTreeSet::new();
        for p in &points {
            if p.depth != depth {
                return Err(BoundaryError::MixedDepths);
            }
            if p.ray.first() != s.basepoint() || s.depth(p.endpoint()) != depth {
                return Err(BoundaryError::BadRay {
                    reason: "point does not belong to this space and depth",
                });
            }
            if !endpoints.insert(p.endpoint()) {
                return Err(BoundaryError::IdenticalEndpoints);
            }
        }

        let rho = rho_table(f, depth);
        let tree = s.is_tree() && s.is_unit_weight();
        let mut products = vec![f64::INFINITY; n * n];
        if tree {
            for i in 0..n {
                for j in (i + 1)..n {
                    let l = tree_lca_depth(s, points[i].endpoint(), points[j].endpoint());
                    products[i * n + j] = rho[l as usize];
                    products[j * n + i] = rho[l as usize];
                }
            }
        } else {
            for j in 1..n {
                let dist_j = s.distances_from(points[j].endpoint());
                for i in 0..j {
                    let m = geodesic_min_depth(s, points[i].endpoint(), points[j].endpoint(), &dist_j)?;
                    products[i * n + j] = rho[m as usize];
                    products[j * n + i] = rho[m as usize];
                }
            }
        }

        let epsilon = match epsilon {
            Some(e) if e.is_finite() && e > 0.0 => e,
            Some(_) => return Err(BoundaryError::BadEpsilon),
            None => {
                let c = fourpoint_defect_of(&products, n)?;
                core::f64::consts::LN_2 / (numeric::fmax(c, 0.0) + 1.0)
            }
        };

        Ok(BoundaryAtlas {
            points,
            depth,
            epsilon,
            rho_depth: rho[depth as usize],
            products,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[BoundaryPoint] {
        &self.points
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// rho of the atlas depth; every off-diagonal product is at most this.
    pub fn rho_depth(&self) -> f64 {
        self.rho_depth
    }

    pub fn product(&self, i: usize, j: usize) -> f64 {
        self.products[i * self.points.len() + j]
    }

    /// Max over triples of min(p(i,m), p(m,j)) - p(i,j); at most 0 on trees.
    pub fn fourpoint_defect(&self) -> Result<f64, BoundaryError> {
        fourpoint_defect_of(&self.products, self.points.len())
    }

    /// d(i,j) = exp(-eps * product), with the exact quasi-triangle constant.
    pub fn visual_quasimetric(&self) -> Result<QuasiMetric, BoundaryError> {
        let n = self.points.len();
        let d: Vec<f64> = self
            .products
            .iter()
            .map(|&p| numeric::exp(-self.epsilon * p))
            .collect();
        let constant = quasi_constant(&d, n)?;
        Ok(QuasiMetric { n, d, constant })
    }
}

fn tree_lca_depth(s: &PointedSpace, mut u: u32, mut v: u32) -> u32 {
    while s.depth(u) > s.depth(v) {
        u = s.canonical_parent(u).expect("deeper vertex has a parent");
    }
    while s.depth(v) > s.depth(u) {
        v = s.canonical_parent(v).expect("deeper vertex has a parent");
    }
    while u != v {
        u = s.canonical_parent(u).expect("non-root has a parent");
        v = s.canonical_parent(v).expect("non-root has a parent");
    }
    s.depth(u)
}

fn fourpoint_defect_of(products: &[f64], n: usize) -> Result<f64, BoundaryError> {
    if n > CUBIC_POINT_MAX {
        return Err(BoundaryError::TooManyPoints {
            have: n,
            max: CUBIC_POINT_MAX,
        });
    }
    let p = |i: usize, j: usize| products[i * n + j];
    let mut defect = 0.0_f64;
    let mut any = false;
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let (pij, pik, pjk) = (p(i, j), p(i, k), p(j, k));
                let d1 = numeric::fmin(pij, pjk) - pik; // j in the middle
                let d2 = numeric::fmin(pij, pik) - pjk; // i in the middle
                let d3 = numeric::fmin(pik, pjk) - pij; // k in the middle
                let worst = numeric::fmax(d1, numeric::fmax(d2, d3));
                defect = if any { numeric::fmax(defect, worst) } else { worst };
                any = true;
            }
        }
    }
    Ok(if any { defect } else { 0.0 })
}

// ---------------------------------------------------------------------------
// Quasimetrics and metrization

/// Symmetric matrix with zero diagonal, positive off-diagonal entries, and
/// the exact quasi-triangle constant max d(i,k) / max(d(i,j), d(j,k)).
#[derive(Clone, Debug)]
pub struct QuasiMetric {
    n: usize,
    d: Vec<f64>,
    constant: f64,
}

impl QuasiMetric {
    /// Validates and adopts a flattened n x n matrix. Tiny asymmetries and
    /// diagonal noise (below 1e-12 of the largest entry) are repaired;
    /// anything larger is rejected.
    pub fn from_matrix(n: usize, mut d: Vec<f64>) -> Result<Self, BoundaryError> {
        if n < 2 {
            return Err(BoundaryError::NotEnoughPoints);
        }
        if d.len() != n * n {
            return Err(BoundaryError::BadMatrix {
                reason: "matrix length is not n*n",
            });
        }
        let mut scale = 0.0_f64;
        for &x in &d {
            if !x.is_finite() || x < 0.0 {
                return Err(BoundaryError::BadMatrix {
                    reason: "entries must be finite and nonnegative",
                });
            }
            scale = numeric::fmax(scale, x);
        }
        if scale == 0.0 {
            return Err(BoundaryError::BadMatrix {
                reason: "all distances are zero",
            });
        }
        let tol = 1e-12 * scale;
        for i in 0..n {
            if d[i * n + i] > tol {
                return Err(BoundaryError::BadMatrix {
                    reason: "diagonal must be zero",
                });
            }
            d[i * n + i] = 0.0;
            for j in (i + 1)..n {
                let (a, b) = (d[i * n + j], d[j * n + i]);
                if numeric::abs(a - b) > tol {
                    return Err(BoundaryError::BadMatrix {
                        reason: "matrix must be symmetric",
                    });
                }
                if a <= tol {
                    return Err(BoundaryError::BadMatrix {
                        reason: "distinct points need positive distance",
                    });
                }
                d[j * n + i] = a;
            }
        }
        let constant = quasi_constant(&d, n)?;
        Ok(QuasiMetric { n, d, constant })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.d
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn diameter(&self) -> f64 {
        let mut m = 0.0;
        for &x in &self.d {
            m = numeric::fmax(m, x);
        }
        m
    }

    pub fn min_positive(&self) -> f64 {
        let mut m = f64::INFINITY;
        for &x in &self.d {
            if x > 0.0 {
                m = numeric::fmin(m, x);
            }
        }
        m
    }

    /// Entrywise power d^theta. Changing epsilon from e to e' transforms a
    /// visual quasimetric exactly this way with theta = e'/e.
    pub fn holder_power(&self, theta: f64) -> Result<QuasiMetric, BoundaryError> {
        if !theta.is_finite() || theta <= 0.0 {
            return Err(BoundaryError::BadEpsilon);
        }
        let d: Vec<f64> = self.d.iter().map(|&x| numeric::powf(x, theta)).collect();
        let constant = quasi_constant(&d, self.n)?;
        Ok(QuasiMetric { n: self.n, d, constant })
    }

    /// True when every triple satisfies the triangle inequality, up to
    /// rounding in the sums.
    pub fn is_metric(&self) -> bool {
        let tol = 1e-12 * numeric::fmax(self.diameter(), 1.0);
        for i in 0..self.n {
            for j in 0..self.n {
                for k in 0..self.n {
                    if self.at(i, k) > self.at(i, j) + self.at(j, k) + tol {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn quasi_constant(d: &[f64], n: usize) -> Result<f64, BoundaryError> {
    if n > CUBIC_POINT_MAX {
        return Err(BoundaryError::TooManyPoints {
            have: n,
            max: CUBIC_POINT_MAX,
        });
    }
    let at = |i: usize, j: usize| d[i * n + j];
    let mut c = 1.0_f64;
    for i in 0..n {
        for k in (i + 1)..n {
            let num = at(i, k);
            for j in 0..n {
                if j == i || j == k {
                    continue;
                }
                let den = numeric::fmax(at(i, j), at(j, k));
                if den > 0.0 {
                    c = numeric::fmax(c, num / den);
                }
            }
        }
    }
    Ok(c)
}

/// Chain metric: minimum over chains of the sum of quasimetric lengths.
/// Requires quasi-triangle constant at most 2; the result is a true metric
/// sandwiched between qm/4 and qm.
pub fn frink_metrize(qm: &QuasiMetric) -> Result<QuasiMetric, BoundaryError> {
    if qm.constant > 2.0 + 1e-9 {
        return Err(BoundaryError::ConstantTooLarge {
            constant: qm.constant,
        });
    }
    let n = qm.n;
    let mut d = qm.d.clone();
    for m in 0..n {
        for i in 0..n {
            let dim = d[i * n + m];
            for j in 0..n {
                let via = dim + d[m * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    // Chains only shorten, so d <= qm holds by construction; the quarter
    // lower bound is the metrization guarantee for constants <= 2.
    let mut worst_ratio = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let quarter = 0.25 * qm.d[i * n + j];
                worst_ratio = numeric::fmin(worst_ratio, d[i * n + j] / quarter);
            }
        }
    }
    if worst_ratio < 1.0 - 1e-9 {
        return Err(BoundaryError::SandwichViolated { ratio: worst_ratio });
    }
    let constant = quasi_constant(&d, n)?;
    let out = QuasiMetric { n, d, constant };
    debug_assert!(out.is_metric());
    Ok(out)
}

/// Radius whose sphere the visual scale r reaches: rho_inverse of
/// (-ln r)/eps + (B + 1). Strictly decreasing in r.
pub fn scale_radius(
    f: &SublinearFunction,
    epsilon: f64,
    r: f64,
    bookkeeping: f64,
) -> Result<f64, BoundaryError> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(BoundaryError::BadEpsilon);
    }
    if !r.is_finite() || r <= 0.0 || r > 1.0 || !bookkeeping.is_finite() || bookkeeping < 0.0 {
        return Err(BoundaryError::BadRadius);
    }
    let target = -numeric::ln(r) / epsilon + bookkeeping + 1.0;
    Ok(f.rho_inverse(target)?)
}

// ---------------------------------------------------------------------------
// Uniform perfectness

/// One scale candidate's outcome: how many (point, radius) pairs lacked a
/// witness in the shell (r/S, r].
#[derive(Clone, Debug)]
pub struct PerfectnessAttempt {
    pub s: f64,
    pub failures: usize,
    pub first_failure: Option<(usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct PerfectnessReport {
    /// Smallest passing candidate, if any.
    pub s: Option<f64>,
    /// Candidates tried in ascending order, up to the first pass.
    pub attempts: Vec<PerfectnessAttempt>,
    /// Two-point spaces pass vacuously at r = diameter.
    pub degenerate: bool,
    pub resolution: f64,
    pub diameter: f64,
}

/// Shared scan driver. `exists(i, lo, hi)` answers whether point i has a
/// neighbor at distance in (lo, hi]; slacks are already folded into the
/// bounds.
fn scan_core(
    n: usize,
    grid: &[f64],
    candidates: &[f64],
    resolution: f64,
    diameter: f64,
    exists: impl Fn(usize, f64, f64) -> bool,
) -> Result<PerfectnessReport, BoundaryError> {
    if grid.is_empty() {
        return Err(BoundaryError::EmptyGrid);
    }
    for &r in grid {
        if !r.is_finite() || r <= 0.0 {
            return Err(BoundaryError::BadScale {
                what: "scan radii must be positive",
            });
        }
        if r < resolution * (1.0 - SHELL_SLACK) || r > diameter * (1.0 + SHELL_SLACK) {
            return Err(BoundaryError::GridOutOfRange {
                r,
                lo: resolution,
                hi: diameter,
            });
        }
    }
    let mut cand: Vec<f64> = candidates.to_vec();
    if cand.is_empty() {
        return Err(BoundaryError::BadScale {
            what: "no scale candidates",
        });
    }
    for &s in &cand {
        if !s.is_finite() || s <= 1.0 {
            return Err(BoundaryError::BadScale {
                what: "scale candidates must exceed 1",
            });
        }
    }
    cand.sort_by(|a, b| a.partial_cmp(b).expect("finite candidates"));
    cand.dedup();

    let mut attempts = Vec::new();
    let mut found = None;
    for &s in &cand {
        let mut failures = 0usize;
        let mut first_failure = None;
        for i in 0..n {
            for &r in grid {
                // The closed end r keeps equality despite rounding; the open
                // end r/S excludes it despite rounding.
                let hi = r * (1.0 + SHELL_SLACK);
                let lo = (r / s) * (1.0 + SHELL_SLACK);
                if !exists(i, lo, hi) {
                    failures += 1;
                    if first_failure.is_none() {
                        first_failure = Some((i, r));
                    }
                }
            }
        }
        attempts.push(PerfectnessAttempt {
            s,
            failures,
            first_failure,
        });
        if failures == 0 {
            found = Some(s);
            break;
        }
    }
    Ok(PerfectnessReport {
        s: found,
        attempts,
        degenerate: n == 2,
        resolution,
        diameter,
    })
}

/// Smallest candidate S such that every point has, for every grid radius r,
/// a neighbor at distance in (r/S, r]. Radii must lie within
/// [resolution, diameter]; a geometric grid of ratio b cannot certify
/// constants below b, so candidates normally start at the grid ratio.
pub fn uniform_perfectness_scan(
    qm: &QuasiMetric,
    grid: &[f64],
    candidates: &[f64],
) -> Result<PerfectnessReport, BoundaryError> {
    let n = qm.n;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| qm.at(i, j))
            .collect();
        row.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        rows.push(row);
    }
    scan_core(
        n,
        grid,
        candidates,
        qm.min_positive(),
        qm.diameter(),
        |i, lo, hi| {
            let row = &rows[i];
            row.partition_point(|&x| x <= hi) > row.partition_point(|&x| x <= lo)
        },
    )
}

// ---------------------------------------------------------------------------
// Tree-structured boundaries

/// Boundary of an unweighted tree ball, held as ancestor structure instead
/// of a dense matrix. Products are rho(lca depth); perfectness and covering
/// queries run in O(depth) per point, so full spheres with tens of
/// thousands of rays stay cheap.
#[derive(Clone, Debug)]
pub struct TreeBoundary {
    leaves: Vec<u32>,
    parent: Vec<u32>,
    depthv: Vec<u32>,
    children: Vec<Vec<u32>>,
    leafcount: Vec<u32>,
    depth: u32,
    epsilon: f64,
    rho: Vec<f64>,
    merged: usize,
    /// Shallowest and deepest depths that occur as an lca of two leaves.
    min_pair_lca: u32,
    max_pair_lca: u32,
}

impl TreeBoundary {
    /// Builds the boundary of sphere(depth), merging rays exactly as
    /// [`sample_boundary`] does. `epsilon = None` uses ln 2: tree products
    /// satisfy the min inequality exactly, so the fourpoint defect is 0.
    pub fn build(
        s: &PointedSpace,
        f: &SublinearFunction,
        depth: u32,
        epsilon: Option<f64>,
    ) -> Result<Self, BoundaryError> {
        if !s.is_tree() || !s.is_unit_weight() {
            return Err(BoundaryError::NotAUnitTree);
        }
        if depth == 0 {
            return Err(BoundaryError::NotEnoughPoints);
        }
        if depth > s.trusted_radius() {
            return Err(BoundaryError::DepthTooLarge {
                depth,
                trusted: s.trusted_radius(),
            });
        }
        if depth > 63 {
            // Branch levels are kept as u64 bitmasks.
            return Err(BoundaryError::BadScale {
                what: "tree boundaries support depth up to 63",
            });
        }
        let epsilon = match epsilon {
            Some(e) if e.is_finite() && e > 0.0 => e,
            Some(_) => return Err(BoundaryError::BadEpsilon),
            None => core::f64::consts::LN_2,
        };
        let rho = rho_table(f, depth);
        let lstar = merge_prefix_depth(&rho, depth);
        let sphere = s.sphere(depth);
        let (leaves, merged) = tree_dedup(s, &sphere, lstar);
        if leaves.len() < 2 {
            return Err(BoundaryError::NotEnoughPoints);
        }

        let nv = s.vertex_count();
        let mut parent = vec![0u32; nv];
        let mut children: Vec<Vec<u32>> = vec![Vec::new(); nv];
        for v in 0..nv as u32 {
            match s.canonical_parent(v) {
                Some(p) => {
                    parent[v as usize] = p;
                    children[p as usize].push(v);
                }
                None => parent[v as usize] = v,
            }
        }
        let depthv = s.depths().to_vec();
        let mut leafcount = vec![0u32; nv];
        for &leaf in &leaves {
            let mut cur = leaf;
            loop {
                leafcount[cur as usize] += 1;
                if depthv[cur as usize] == 0 {
                    break;
                }
                cur = parent[cur as usize];
            }
        }
        let mut min_pair_lca = u32::MAX;
        let mut max_pair_lca = 0u32;
        for v in 0..nv {
            let bearing = children[v]
                .iter()
                .filter(|&&c| leafcount[c as usize] > 0)
                .count();
            if bearing >= 2 {
                min_pair_lca = min_pair_lca.min(depthv[v]);
                max_pair_lca = max_pair_lca.max(depthv[v]);
            }
        }
        if min_pair_lca == u32::MAX {
            // >= 2 leaves in a tree always branch somewhere.
            return Err(BoundaryError::NotEnoughPoints);
        }

        Ok(TreeBoundary {
            leaves,
            parent,
            depthv,
            children,
            leafcount,
            depth,
            epsilon,
            rho,
            merged,
            min_pair_lca,
            max_pair_lca,
        })
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaves(&self) -> &[u32] {
        &self.leaves
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn merged(&self) -> usize {
        self.merged
    }

    fn ancestor(&self, v: u32, level: u32) -> u32 {
        let mut cur = v;
        while self.depthv[cur as usize] > level {
            cur = self.parent[cur as usize];
        }
        cur
    }

    pub fn lca_depth(&self, i: usize, j: usize) -> u32 {
        let (mut u, mut v) = (self.leaves[i], self.leaves[j]);
        while u != v {
            u = self.parent[u as usize];
            v = self.parent[v as usize];
        }
        self.depthv[u as usize]
    }

    /// rho(lca depth); +infinity on the diagonal.
    pub fn product(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return f64::INFINITY;
        }
        self.rho[self.lca_depth(i, j) as usize]
    }

    /// exp(-eps * product).
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        numeric::exp(-self.epsilon * self.product(i, j))
    }

    /// The visual distance of a pair meeting at ancestor depth `level`.
    pub fn distance_at_level(&self, level: u32) -> f64 {
        numeric::exp(-self.epsilon * self.rho[level as usize])
    }

    /// Canonical rays to the kept leaves, for dense-atlas interop.
    pub fn rays(&self, s: &PointedSpace) -> Result<Vec<Path>, BoundaryError> {
        self.leaves
            .iter()
            .map(|&v| parent_walk_ray(s, v))
            .collect()
    }

    /// Dense atlas over the same points and epsilon; only for boundaries
    /// small enough to hold a product matrix.
    pub fn to_atlas(
        &self,
        s: &PointedSpace,
        f: &SublinearFunction,
    ) -> Result<BoundaryAtlas, BoundaryError> {
        let points = self
            .rays(s)?
            .into_iter()
            .map(|ray| BoundaryPoint::new(s, ray))
            .collect::<Result<Vec<_>, _>>()?;
        BoundaryAtlas::build(s, f, points, Some(self.epsilon))
    }

    /// Same scan as [`uniform_perfectness_scan`], answered from branch
    /// structure: point i has a witness in (lo, hi] iff some ancestor level
    /// in the matching lca range carries another leaf.
    pub fn perfectness_scan(
        &self,
        grid: &[f64],
        candidates: &[f64],
    ) -> Result<PerfectnessReport, BoundaryError> {
        let resolution = numeric::exp(-self.epsilon * self.rho[self.max_pair_lca as usize]);
        let diameter = numeric::exp(-self.epsilon * self.rho[self.min_pair_lca as usize]);
        let depth = self.depth as usize;
        // branch_mask[i] bit l set: some other leaf meets leaf i exactly at
        // ancestor depth l.
        let mut masks = Vec::with_capacity(self.leaves.len());
        for &leaf in &self.leaves {
            let mut mask = 0u64;
            let mut cur = leaf;
            let mut below = 1u32; // leafcount of the child toward the leaf
            while self.depthv[cur as usize] > 0 {
                let p = self.parent[cur as usize];
                let l = self.depthv[p as usize];
                if self.leafcount[p as usize] > below {
                    mask |= 1u64 << l;
                }
                below = self.leafcount[p as usize];
                cur = p;
            }
            masks.push(mask);
        }
        let eps = self.epsilon;
        let rho = &self.rho;
        scan_core(
            self.leaves.len(),
            grid,
            candidates,
            resolution,
            diameter,
            move |i, lo, hi| {
                // d in (lo, hi] means rho(l) in [-ln(hi)/eps, -ln(lo)/eps).
                let t_hi = -numeric::ln(hi) / eps;
                let t_lo = -numeric::ln(lo) / eps;
                let a = rho.partition_point(|&x| x < t_hi);
                let b = rho.partition_point(|&x| x < t_lo);
                if a >= b || a > depth {
                    return false;
                }
                let top = (b - 1).min(depth - 1);
                if a > top {
                    return false;
                }
                let range = (u64::MAX << a) & !(u64::MAX.checked_shl(top as u32 + 1).unwrap_or(0));
                masks[i] & range != 0
            },
        )
    }

    /// Exact covering count: the ball around leaf i of visual radius
    /// exp(-eps rho(j)) is covered by exactly the nonempty depth-k subtrees
    /// beneath its depth-j ancestor, since visual balls are subtrees.
    pub fn covering_count(&self, i: usize, j: u32, k: u32) -> Result<usize, BoundaryError> {
        if j >= k || k > self.depth {
            return Err(BoundaryError::BadScale {
                what: "need ancestor depths j < k <= atlas depth",
            });
        }
        let root = self.ancestor(self.leaves[i], j);
        let mut stack = vec![root];
        let mut count = 0usize;
        while let Some(v) = stack.pop() {
            if self.leafcount[v as usize] == 0 {
                continue;
            }
            if self.depthv[v as usize] == k {
                count += 1;
                continue;
            }
            stack.extend(self.children[v as usize].iter().copied());
        }
        Ok(count)
    }

    /// (R, r, count) samples for dimension fitting: for each depth pair
    /// (j, k) and every stride-th leaf, the exact number of visual-radius-r
    /// balls needed to cover the visual-radius-R ball.
    pub fn covering_samples(
        &self,
        depth_pairs: &[(u32, u32)],
        stride: usize,
    ) -> Result<Vec<(f64, f64, usize)>, BoundaryError> {
        if stride == 0 {
            return Err(BoundaryError::BadScale {
                what: "stride must be positive",
            });
        }
        let mut out = Vec::new();
        for &(j, k) in depth_pairs {
            let big_r = numeric::exp(-self.epsilon * self.rho[j as usize]);
            let r = numeric::exp(-self.epsilon * self.rho[k as usize]);
            for i in (0..self.leaves.len()).step_by(stride) {
                out.push((big_r, r, self.covering_count(i, j, k)?));
            }
        }
        Ok(out)
    }

    /// Max over sampled triples of min(p(i,m), p(m,j)) - p(i,j). Tree lcas
    /// satisfy the min inequality exactly, so this never exceeds 0.
    pub fn fourpoint_defect_sampled(&self, samples: usize, seed: u64) -> f64 {
        let n = self.leaves.len();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut defect = f64::NEG_INFINITY;
        let mut drawn = 0usize;
        while drawn < samples {
            let i = (rng.next_u64() as usize) % n;
            let j = (rng.next_u64() as usize) % n;
            let k = (rng.next_u64() as usize) % n;
            if i == j || j == k || i == k {
                continue;
            }
            let d = numeric::fmin(self.product(i, j), self.product(j, k)) - self.product(i, k);
            defect = numeric::fmax(defect, d);
            drawn += 1;
        }
        defect
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kappa::SublinearFunction;
    use crate::space::GroupPresentation;

    fn const_kappa() -> SublinearFunction {
        SublinearFunction::constant(1.0).unwrap()
    }

    fn free_ball(radius: u32) -> PointedSpace {
        PointedSpace::cayley_ball(&GroupPresentation::free(2), radius).unwrap()
    }

    fn find_label(s: &PointedSpace, want: &str) -> u32 {
        (0..s.vertex_count() as u32)
            .find(|&v| s.label(v) == Some(want))
            .expect("label present")
    }

    #[test]
    fn full_free_sphere_depth_6_keeps_972_rays() {
        let s = free_ball(8);
        let sample = sample_boundary(&s, &const_kappa(), 6, None, 0).unwrap();
        assert_eq!(sample.points.len(), 972);
        assert_eq!(sample.merged, 0);
        assert!(!sample.clamped);
    }

    #[test]
    fn depth_one_gives_one_ray_per_generator_direction() {
        let s = free_ball(4);
        let sample = sample_boundary(&s, &const_kappa(), 1, None, 0).unwrap();
        assert_eq!(sample.points.len(), 4);
        for p in &sample.points {
            assert_eq!(p.ray().length(), 1);
        }
    }

    #[test]
    fn oversized_count_clamps_with_flag() {
        let s = free_ball(4);
        let sample = sample_boundary(&s, &const_kappa(), 2, Some(10_000), 0).unwrap();
        assert!(sample.clamped);
        assert_eq!(sample.points.len(), 12);
        let exact = sample_boundary(&s, &const_kappa(), 2, Some(12), 0).unwrap();
        assert!(!exact.clamped);
    }

    #[test]
    fn partial_sample_is_deterministic_in_the_seed() {
        let s = free_ball(8);
        let a = sample_boundary(&s, &const_kappa(), 5, Some(40), 7).unwrap();
        let b = sample_boundary(&s, &const_kappa(), 5, Some(40), 7).unwrap();
        let ea: Vec<u32> = a.points.iter().map(|p| p.endpoint()).collect();
        let eb: Vec<u32> = b.points.iter().map(|p| p.endpoint()).collect();
        assert_eq!(ea, eb);
        let c = sample_boundary(&s, &const_kappa(), 5, Some(40), 8).unwrap();
        let ec: Vec<u32> = c.points.iter().map(|p| p.endpoint()).collect();
        assert_ne!(ea, ec);
    }

    #[test]
    fn log_kappa_merges_sibling_rays() {
        let s = free_ball(8);
        let f = SublinearFunction::log();
        let sample = sample_boundary(&s, &f, 6, None, 0).unwrap();
        assert!(sample.merged > 0);
        assert!(sample.points.len() < 972);
        // Kept pairs stay below the merge threshold.
        let atlas = BoundaryAtlas::build(&s, &f, sample.points, Some(1.0)).unwrap();
        let threshold = f.rho(6.0).unwrap().value - 1.0 + DEDUP_SLACK;
        for i in 0..atlas.len() {
            for j in (i + 1)..atlas.len() {
                assert!(atlas.product(i, j) <= threshold);
            }
        }
    }

    #[test]
    fn depth_beyond_trusted_radius_is_rejected() {
        let s = free_ball(8); // margin 2, trusted 6
        let err = sample_boundary(&s, &const_kappa(), 7, None, 0).unwrap_err();
        assert!(matches!(err, BoundaryError::DepthTooLarge { trusted: 6, .. }));
    }

    #[test]
    fn products_match_classical_halfsum_on_tree() {
        let s = free_ball(6);
        let f = const_kappa();
        let sample = sample_boundary(&s, &f, 4, None, 0).unwrap();
        let atlas = BoundaryAtlas::build(&s, &f, sample.points, Some(1.0)).unwrap();
        for i in 0..atlas.len() {
            for j in (i + 1)..atlas.len() {
                let (u, v) = (atlas.points()[i].endpoint(), atlas.points()[j].endpoint());
                let d = s.distance(u, v).unwrap() as f64;
                let classical = (s.depth(u) as f64 + s.depth(v) as f64 - d) / 2.0;
                assert_eq!(atlas.product(i, j), classical);
            }
        }
    }

    #[test]
    fn direction_products_on_the_tree() {
        let s = free_ball(6);
        let f = const_kappa();
        let mk = |label: &str| {
            let v = find_label(&s, label);
            BoundaryPoint::new(&s, s.geodesic(s.basepoint(), v).unwrap()).unwrap()
        };
        let (aaa, bbb, abb) = (mk("aaa"), mk("bbb"), mk("abb"));
        assert_eq!(gromov_product_kappa(&s, &f, &aaa, &bbb).unwrap(), 0.0);
        let rho1 = f.rho(1.0).unwrap().value;
        assert_eq!(gromov_product_kappa(&s, &f, &aaa, &abb).unwrap(), rho1);
        let err = gromov_product_kappa(&s, &f, &aaa, &aaa).unwrap_err();
        assert_eq!(err, BoundaryError::IdenticalEndpoints);
    }

    #[test]
    fn non_geodesic_ray_is_rejected() {
        let s = free_ball(4);
        let a = find_label(&s, "a");
        let o = s.basepoint();
        let walk = Path::new(&s, vec![o, a, o]).unwrap();
        let err = BoundaryPoint::new(&s, walk).unwrap_err();
        assert!(matches!(err, BoundaryError::BadRay { .. }));
    }

    #[test]
    fn atlas_rejects_mixed_depths_and_duplicates() {
        let s = free_ball(6);
        let f = const_kappa();
        let d3 = sample_boundary(&s, &f, 3, None, 0).unwrap().points;
        let d4 = sample_boundary(&s, &f, 4, None, 0).unwrap().points;
        let mixed = vec![d3[0].clone(), d4[0].clone()];
        assert_eq!(
            BoundaryAtlas::build(&s, &f, mixed, Some(1.0)).unwrap_err(),
            BoundaryError::MixedDepths
        );
        let dup = vec![d3[0].clone(), d3[0].clone()];
        assert_eq!(
            BoundaryAtlas::build(&s, &f, dup, Some(1.0)).unwrap_err(),
            BoundaryError::IdenticalEndpoints
        );
    }

    #[test]
    fn visual_quasimetric_on_tree_is_an_exact_ultrametric() {
        let s = free_ball(6);
        let f = const_kappa();
        let points = sample_boundary(&s, &f, 4, None, 0).unwrap().points;
        let atlas = BoundaryAtlas::build(&s, &f, points, Some(3.0_f64.ln())).unwrap();
        assert!(atlas.fourpoint_defect().unwrap() <= 0.0);
        let qm = atlas.visual_quasimetric().unwrap();
        assert!((qm.constant() - 1.0).abs() <= 1e-12);
        // Distances land on the 3^-l spectrum.
        let d01 = qm.at(0, 1);
        let l = atlas.product(0, 1);
        assert!((d01 - numeric::powf(3.0, -l)).abs() <= 1e-12);
    }

    #[test]
    fn constant_is_bounded_by_exp_eps_defect() {
        let s = PointedSpace::cayley_ball(&GroupPresentation::z2(), 8).unwrap();
        let f = const_kappa();
        let points = sample_boundary(&s, &f, 4, None, 0).unwrap().points;
        assert!(points.len() >= 3);
        let atlas = BoundaryAtlas::build(&s, &f, points, None).unwrap();
        let c = numeric::fmax(atlas.fourpoint_defect().unwrap(), 0.0);
        let qm = atlas.visual_quasimetric().unwrap();
        assert!(qm.constant() <= numeric::exp(atlas.epsilon() * c) + 1e-9);
        // The calibrated epsilon keeps the constant within 2.
        assert!(qm.constant() <= 2.0 + 1e-9);
    }

    #[test]
    fn two_point_quasimetric_has_constant_one() {
        let qm = QuasiMetric::from_matrix(2, vec![0.0, 0.7, 0.7, 0.0]).unwrap();
        assert_eq!(qm.constant(), 1.0);
        let m = frink_metrize(&qm).unwrap();
        assert_eq!(m.at(0, 1), 0.7);
    }

    #[test]
    fn holder_power_is_exact_entrywise() {
        let s = free_ball(6);
        let f = const_kappa();
        let points = sample_boundary(&s, &f, 3, None, 0).unwrap().points;
        let atlas = BoundaryAtlas::build(&s, &f, points.clone(), Some(0.5)).unwrap();
        let atlas2 = BoundaryAtlas::build(&s, &f, points, Some(1.25)).unwrap();
        let (qm, qm2) = (
            atlas.visual_quasimetric().unwrap(),
            atlas2.visual_quasimetric().unwrap(),
        );
        let powered = qm.holder_power(1.25 / 0.5).unwrap();
        for i in 0..qm.len() {
            for j in 0..qm.len() {
                assert!((powered.at(i, j) - qm2.at(i, j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn frink_keeps_ultrametrics_and_shortens_slack_triangles() {
        let s = free_ball(6);
        let f = const_kappa();
        let points = sample_boundary(&s, &f, 3, None, 0).unwrap().points;
        let atlas = BoundaryAtlas::build(&s, &f, points, Some(3.0_f64.ln())).unwrap();
        let qm = atlas.visual_quasimetric().unwrap();
        let m = frink_metrize(&qm).unwrap();
        for i in 0..qm.len() {
            for j in 0..qm.len() {
                assert_eq!(m.at(i, j), qm.at(i, j));
            }
        }
        // A non-metric triple gets shortened to its chain length.
        let tri = QuasiMetric::from_matrix(
            3,
            vec![0.0, 1.0, 1.8, 1.0, 0.0, 0.4, 1.8, 0.4, 0.0],
        )
        .unwrap();
        assert!(tri.constant() <= 2.0);
        assert!(!tri.is_metric());
        let fixed = frink_metrize(&tri).unwrap();
        assert_eq!(fixed.at(0, 2), 1.4);
        assert!(fixed.is_metric());
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(fixed.at(i, j) >= 0.25 * tri.at(i, j) - 1e-12);
                    assert!(fixed.at(i, j) <= tri.at(i, j) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn frink_rejects_large_constants_with_guidance() {
        let qm = QuasiMetric::from_matrix(
            3,
            vec![0.0, 1.0, 2.5, 1.0, 0.0, 1.0, 2.5, 1.0, 0.0],
        )
        .unwrap();
        assert!(qm.constant() > 2.0);
        let err = frink_metrize(&qm).unwrap_err();
        assert!(matches!(err, BoundaryError::ConstantTooLarge { .. }));
    }

    #[test]
    fn scale_radius_matches_identity_kappa() {
        let f = const_kappa();
        let r = numeric::exp(-10.0);
        let big_r = scale_radius(&f, 1.0, r, 0.0).unwrap();
        assert!((big_r - 11.0).abs() <= 1e-8);
        assert!((scale_radius(&f, 1.0, 1.0, 0.0).unwrap() - 1.0).abs() <= 1e-8);
        assert_eq!(
            scale_radius(&f, 1.0, 1.5, 0.0).unwrap_err(),
            BoundaryError::BadRadius
        );
        let looser = scale_radius(&f, 1.0, 0.5, 0.0).unwrap();
        let tighter = scale_radius(&f, 1.0, 0.1, 0.0).unwrap();
        assert!(tighter > looser);
    }

    #[test]
    fn scale_radius_round_trips_through_rho() {
        let f = SublinearFunction::power(0.5).unwrap();
        let (eps, b, r) = (0.7, 1.3, 0.37);
        let big_r = scale_radius(&f, eps, r, b).unwrap();
        let back = numeric::exp(-eps * f.rho(big_r).unwrap().value)
            * numeric::exp(eps * (b + 1.0));
        assert!((back - r).abs() <= 1e-8);
    }

    #[test]
    fn perfectness_two_point_space_is_degenerate() {
        let qm = QuasiMetric::from_matrix(2, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let report = uniform_perfectness_scan(&qm, &[0.5], &[2.0]).unwrap();
        assert_eq!(report.s, Some(2.0));
        assert!(report.degenerate);
        let err = uniform_perfectness_scan(&qm, &[0.2], &[2.0]).unwrap_err();
        assert!(matches!(err, BoundaryError::GridOutOfRange { .. }));
    }

    #[test]
    fn perfectness_fails_at_an_isolated_gap() {
        // Four clustered points plus one isolated at distance 1.
        let n = 5;
        let mut d = vec![0.0; n * n];
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    d[i * n + j] = 0.1;
                }
            }
        }
        for i in 0..4 {
            d[i * n + 4] = 1.0;
            d[4 * n + i] = 1.0;
        }
        let qm = QuasiMetric::from_matrix(n, d).unwrap();
        let below_gap = uniform_perfectness_scan(&qm, &[0.5], &[3.0]).unwrap();
        assert_eq!(below_gap.s, None);
        assert_eq!(below_gap.attempts[0].failures, n);
        let at_gap = uniform_perfectness_scan(&qm, &[1.0], &[3.0]).unwrap();
        assert_eq!(at_gap.s, Some(3.0));
    }

    #[test]
    fn tree_boundary_agrees_with_the_dense_route() {
        let s = free_ball(8);
        let f = const_kappa();
        let tb = TreeBoundary::build(&s, &f, 4, Some(3.0_f64.ln())).unwrap();
        let atlas = tb.to_atlas(&s, &f).unwrap();
        assert_eq!(tb.len(), atlas.len());
        for i in 0..tb.len() {
            for j in 0..tb.len() {
                if i != j {
                    assert_eq!(tb.product(i, j), atlas.product(i, j));
                }
            }
        }
        let qm = atlas.visual_quasimetric().unwrap();
        let grid = [1.0 / 3.0, 1.0 / 9.0, 1.0 / 27.0];
        let cands = [1.5, 3.0];
        let dense = uniform_perfectness_scan(&qm, &grid, &cands).unwrap();
        let fast = tb.perfectness_scan(&grid, &cands).unwrap();
        assert_eq!(dense.s, fast.s);
        assert_eq!(dense.attempts.len(), fast.attempts.len());
        for (a, b) in dense.attempts.iter().zip(fast.attempts.iter()) {
            assert_eq!(a.failures, b.failures);
        }
    }

    #[test]
    fn tree_perfectness_passes_at_the_branching_ratio() {
        let s = free_ball(8);
        let f = const_kappa();
        let tb = TreeBoundary::build(&s, &f, 6, Some(3.0_f64.ln())).unwrap();
        assert_eq!(tb.len(), 972);
        assert_eq!(tb.merged(), 0);
        let grid: Vec<f64> = (1..=4).map(|k| numeric::powf(3.0, -(k as f64))).collect();
        let report = tb.perfectness_scan(&grid, &[3.0, 9.0]).unwrap();
        assert_eq!(report.s, Some(3.0));
        assert!(!report.degenerate);
    }

    #[test]
    fn covering_counts_are_powers_of_the_branching() {
        let s = free_ball(8);
        let f = const_kappa();
        let tb = TreeBoundary::build(&s, &f, 6, None).unwrap();
        for i in [0usize, 100, 900] {
            assert_eq!(tb.covering_count(i, 1, 3).unwrap(), 9);
            assert_eq!(tb.covering_count(i, 2, 6).unwrap(), 81);
        }
        // From the root the first branching is 4-way.
        assert_eq!(tb.covering_count(0, 0, 2).unwrap(), 12);
        assert!(tb.covering_count(0, 3, 3).is_err());
        let samples = tb.covering_samples(&[(1, 3), (2, 4)], 97).unwrap();
        assert!(samples.iter().all(|&(_, _, n)| n == 9));
    }

    #[test]
    fn tree_fourpoint_defect_never_exceeds_zero() {
        let s = free_ball(8);
        let f = SublinearFunction::log();
        let tb = TreeBoundary::build(&s, &f, 6, None).unwrap();
        assert!(tb.fourpoint_defect_sampled(2000, 11) <= 0.0);
    }

    #[test]
    fn tree_boundary_rejects_non_trees() {
        let s = PointedSpace::cayley_ball(&GroupPresentation::z2(), 6).unwrap();
        let err = TreeBoundary::build(&s, &const_kappa(), 3, None).unwrap_err();
        assert_eq!(err, BoundaryError::NotAUnitTree);
    }

    #[test]
    fn quasimetric_matrix_validation() {
        assert!(matches!(
            QuasiMetric::from_matrix(2, vec![0.0, 1.0, 0.5, 0.0]).unwrap_err(),
            BoundaryError::BadMatrix { .. }
        ));
        assert!(matches!(
            QuasiMetric::from_matrix(2, vec![0.3, 1.0, 1.0, 0.0]).unwrap_err(),
            BoundaryError::BadMatrix { .. }
        ));
        assert!(matches!(
            QuasiMetric::from_matrix(2, vec![0.0, 0.0, 0.0, 0.0]).unwrap_err(),
            BoundaryError::BadMatrix { .. }
        ));
    }
}

//! Finite-scale estimators for weak-Morse behavior: quasi-geodesic
//! sampling, empirical gauges, slim-triangle constants, coarse center
//! sets, and center-exhaustiveness coverage.
//!
//! Sampling-based quantities are lower bounds and are reported with
//! sample counts and a method tag. Trees get exact fast paths (unique
//! geodesics make Gromov products equal true side distances); everything
//! else runs a bounded deterministic scan that fails toward
//! under-reporting, never silent overstatement.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use rand_core::{RngCore, SeedableRng};

use crate::kappa::SublinearFunction;
use crate::space::{Path, PointedSpace, SpaceError};

/// Endpoint distance up to which detour enumeration is exhaustive.
pub const EXHAUSTIVE_DISTANCE_MAX: u32 = 12;
/// Most directions the non-tree exhaustiveness scan accepts.
pub const SCAN_DIRECTION_MAX: usize = 64;
/// Candidate triples verified per vertex before giving up on it.
pub const SCAN_VERIFY_CAP: usize = 256;
/// Extreme detour witnesses always included in sampled mode.
const EXTREME_WITNESSES: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum MorseError {
    BadParameter { reason: &'static str },
    NotGeodesic,
    DegenerateTriangle { reason: &'static str },
    EmptyCenterSet,
    AtlasTooSmall { have: usize },
    TooManyDirections { have: usize, max: usize },
    Space(SpaceError),
}

impl From<SpaceError> for MorseError {
    fn from(e: SpaceError) -> Self {
        MorseError::Space(e)
    }
}

impl core::fmt::Display for MorseError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MorseError::BadParameter { reason } => write!(f, "bad parameter: {reason}"),
            MorseError::NotGeodesic => write!(f, "path is not a geodesic in this space"),
            MorseError::DegenerateTriangle { reason } => {
                write!(f, "degenerate triangle: {reason}")
            }
            MorseError::EmptyCenterSet => write!(f, "center set is empty"),
            MorseError::AtlasTooSmall { have } => {
                write!(f, "need at least 3 distinct directions, have {have}")
            }
            MorseError::TooManyDirections { have, max } => {
                write!(f, "{have} directions exceed the scan limit {max}")
            }
            MorseError::Space(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for MorseError {}

/// (q, Q) quasi-geodesic admissibility parameters: a path sigma is
/// admissible iff (j-i)/q - Q <= d(sigma_i, sigma_j) <= q(j-i) + Q for
/// all index pairs i < j.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuasiGeodesicParams {
    q: f64,
    big_q: f64,
}

impl QuasiGeodesicParams {
    pub fn new(q: f64, big_q: f64) -> Result<Self, MorseError> {
        if !q.is_finite() || q < 1.0 {
            return Err(MorseError::BadParameter {
                reason: "q must be finite and >= 1",
            });
        }
        if !big_q.is_finite() || big_q < 0.0 {
            return Err(MorseError::BadParameter {
                reason: "Q must be finite and >= 0",
            });
        }
        Ok(QuasiGeodesicParams { q, big_q })
    }

    pub fn geodesic() -> Self {
        QuasiGeodesicParams { q: 1.0, big_q: 0.0 }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn big_q(&self) -> f64 {
        self.big_q
    }

    /// Whether (q', Q') is pointwise at least as loose.
    pub fn dominated_by(&self, other: &QuasiGeodesicParams) -> bool {
        self.q <= other.q && self.big_q <= other.big_q
    }

    fn admits(&self, gap: u32, dist: u32) -> bool {
        let gap = gap as f64;
        let dist = dist as f64;
        dist <= self.q * gap + self.big_q + 1e-9
            && dist >= gap / self.q - self.big_q - 1e-9
    }
}

/// Checks (q,Q)-admissibility of a path (index-parameterized; unit-weight
/// spaces). For q=1, Q=0 a single distance query suffices: subpaths of
/// geodesics are geodesics.
pub fn is_admissible(
    s: &PointedSpace,
    path: &Path,
    qq: &QuasiGeodesicParams,
) -> Result<bool, MorseError> {
    let verts = path.vertices();
    if verts.len() == 1 {
        return Ok(true);
    }
    if qq.q == 1.0 && qq.big_q == 0.0 && s.is_unit_weight() {
        let d = s.distance(path.first(), path.last())?;
        return Ok(d == verts.len() as u32 - 1);
    }
    // All-pairs check with one BFS per distinct vertex.
    let mut dists: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for i in 0..verts.len() {
        let vi = verts[i];
        let from = dists
            .entry(vi)
            .or_insert_with(|| s.distances_from(vi))
            .clone();
        for (j, &vj) in verts.iter().enumerate().skip(i + 1) {
            if !qq.admits((j - i) as u32, from[vj as usize]) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMethod {
    Exhaustive,
    Sampled,
}

#[derive(Clone, Debug)]
pub struct QuasiGeodesicSample {
    pub paths: Vec<Path>,
    /// True when no admissible path beyond Z itself was found.
    pub only_trivial: bool,
    pub method: SampleMethod,
    pub candidates_checked: usize,
}

/// Samples (q,Q)-admissible paths with endpoints on the geodesic Z. Small
/// instances (endpoint distance <= 12) enumerate every single-detour path
/// and every subsegment; larger ones mix deterministic extreme-detour
/// witnesses with seeded random detours. Every returned path is verified.
pub fn sample_quasi_geodesics(
    s: &PointedSpace,
    z: &Path,
    qq: &QuasiGeodesicParams,
    n: usize,
    seed: u64,
) -> Result<QuasiGeodesicSample, MorseError> {
    if n == 0 {
        return Err(MorseError::BadParameter { reason: "n must be >= 1" });
    }
    if !z.is_geodesic(s) {
        return Err(MorseError::NotGeodesic);
    }
    let (x, y) = (z.first(), z.last());
    let d = z.length();
    let bound = qq.q * d as f64 + qq.big_q + 1e-9;

    let mut seen: BTreeSet<Vec<u32>> = BTreeSet::new();
    let mut paths: Vec<Path> = Vec::new();
    let mut checked = 0usize;

    let mut push = |p: Path, paths: &mut Vec<Path>, checked: &mut usize| -> Result<bool, MorseError> {
        *checked += 1;
        if paths.len() >= n || seen.contains(p.vertices()) {
            return Ok(false);
        }
        if is_admissible(s, &p, qq)? {
            seen.insert(p.vertices().to_vec());
            paths.push(p);
            return Ok(true);
        }
        Ok(false)
    };

    push(z.clone(), &mut paths, &mut checked)?;

    let dist_x = s.distances_from(x);
    let dist_y = s.distances_from(y);
    let detour_ok = |w: u32| {
        let (a, b) = (dist_x[w as usize], dist_y[w as usize]);
        a != u32::MAX && b != u32::MAX && (a + b) as f64 <= bound
    };
    let via = |w: u32| -> Result<Path, MorseError> {
        let g1 = s.geodesic(x, w)?;
        let g2 = s.geodesic(w, y)?;
        let mut verts = g1.vertices().to_vec();
        verts.extend_from_slice(&g2.vertices()[1..]);
        Ok(Path::new(s, verts)?)
    };

    let method = if d <= EXHAUSTIVE_DISTANCE_MAX {
        for w in 0..s.vertex_count() as u32 {
            if paths.len() >= n {
                break;
            }
            if detour_ok(w) {
                let p = via(w)?;
                push(p, &mut paths, &mut checked)?;
            }
        }
        // Subsegments of Z (proper ones; the full segment is already in).
        let zv = z.vertices();
        'outer: for i in 0..zv.len() {
            for j in (i + 1)..zv.len() {
                if paths.len() >= n {
                    break 'outer;
                }
                if j - i == zv.len() - 1 {
                    continue;
                }
                let p = Path::new(s, zv[i..=j].to_vec())?;
                push(p, &mut paths, &mut checked)?;
            }
        }
        SampleMethod::Exhaustive
    } else {
        // Deterministic extreme witnesses: admissible detour vertices
        // farthest from Z.
        let dz = s.distances_from_set(z.vertices());
        let mut extremes: Vec<(u32, u32)> = (0..s.vertex_count() as u32)
            .filter(|&w| detour_ok(w))
            .map(|w| (dz[w as usize], w))
            .collect();
        extremes.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, w) in extremes.iter().take(EXTREME_WITNESSES) {
            if paths.len() >= n {
                break;
            }
            let p = via(w)?;
            push(p, &mut paths, &mut checked)?;
        }
        // Seeded random detours from the admissible pool.
        let pool: Vec<u32> = extremes.iter().map(|&(_, w)| w).collect();
        if !pool.is_empty() {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut attempts = 0usize;
            while paths.len() < n && attempts < 20 * n {
                attempts += 1;
                let w = pool[(rng.next_u64() % pool.len() as u64) as usize];
                let p = via(w)?;
                push(p, &mut paths, &mut checked)?;
            }
        }
        SampleMethod::Sampled
    };

    let only_trivial = paths.len() == 1;
    Ok(QuasiGeodesicSample {
        paths,
        only_trivial,
        method,
        candidates_checked: checked,
    })
}

#[derive(Clone, Debug)]
pub struct GaugeEntry {
    pub params: QuasiGeodesicParams,
    pub m_hat: f64,
    pub sample_count: usize,
    pub method: SampleMethod,
}

/// Per-(q,Q) empirical gauge table. Every m-hat is a lower bound for the
/// true finite-scale gauge; table construction filters one common path
/// pool per entry, so entries are monotone under (q,Q) dominance.
#[derive(Clone, Debug)]
pub struct GaugeEstimate {
    pub entries: Vec<GaugeEntry>,
}

impl GaugeEstimate {
    pub fn m_hat(&self) -> f64 {
        self.entries.iter().fold(0.0, |a, e| a.max(e.m_hat))
    }
}

fn pool_m_hat(s: &PointedSpace, f: &SublinearFunction, dz: &[u32], paths: &[&Path]) -> f64 {
    let mut m = 0.0f64;
    for p in paths {
        for &v in p.vertices() {
            let r = dz[v as usize] as f64 / f.eval(s.depth(v) as f64);
            if r > m {
                m = r;
            }
        }
    }
    m
}

/// Empirical Morse gauge for one (q,Q): max over sampled admissible paths
/// and their points of d(point, Z) / kappa(|point|).
pub fn empirical_gauge(
    s: &PointedSpace,
    f: &SublinearFunction,
    z: &Path,
    qq: &QuasiGeodesicParams,
    n: usize,
    seed: u64,
) -> Result<GaugeEstimate, MorseError> {
    empirical_gauge_table(s, f, z, core::slice::from_ref(qq), n, seed)
}

/// Gauge table over several (q,Q) pairs, all filtered from one pooled
/// sample so dominance monotonicity holds exactly.
pub fn empirical_gauge_table(
    s: &PointedSpace,
    f: &SublinearFunction,
    z: &Path,
    qqs: &[QuasiGeodesicParams],
    n: usize,
    seed: u64,
) -> Result<GaugeEstimate, MorseError> {
    if qqs.is_empty() {
        return Err(MorseError::BadParameter { reason: "need at least one (q,Q)" });
    }
    let mut pool: Vec<Path> = Vec::new();
    let mut seen: BTreeSet<Vec<u32>> = BTreeSet::new();
    let mut methods: Vec<SampleMethod> = Vec::new();
    for (i, qq) in qqs.iter().enumerate() {
        let sample = sample_quasi_geodesics(s, z, qq, n, seed.wrapping_add(i as u64))?;
        methods.push(sample.method);
        for p in sample.paths {
            if seen.insert(p.vertices().to_vec()) {
                pool.push(p);
            }
        }
    }
    let dz = s.distances_from_set(z.vertices());
    let mut entries = Vec::with_capacity(qqs.len());
    for (i, qq) in qqs.iter().enumerate() {
        let mut admissible: Vec<&Path> = Vec::new();
        for p in &pool {
            if is_admissible(s, p, qq)? {
                admissible.push(p);
            }
        }
        entries.push(GaugeEntry {
            params: *qq,
            m_hat: pool_m_hat(s, f, &dz, &admissible),
            sample_count: admissible.len(),
            method: methods[i],
        });
    }
    Ok(GaugeEstimate { entries })
}

/// Triangle of three geodesic sides pairwise sharing endpoints; the usual
/// finite-scale proxy has corners on a deep sphere.
#[derive(Clone, Debug)]
pub struct IdealTriangle {
    sides: [Path; 3],
    corners: [u32; 3],
    gauge_m: Option<f64>,
}

impl IdealTriangle {
    pub fn new(s: &PointedSpace, sides: [Path; 3]) -> Result<Self, MorseError> {
        for side in &sides {
            if !side.is_geodesic(s) {
                return Err(MorseError::NotGeodesic);
            }
        }
        // Each corner must appear as an endpoint of exactly two sides.
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for side in &sides {
            *counts.entry(side.first()).or_insert(0) += 1;
            *counts.entry(side.last()).or_insert(0) += 1;
        }
        if counts.len() != 3 || counts.values().any(|&c| c != 2) {
            return Err(MorseError::DegenerateTriangle {
                reason: "sides do not pairwise share three distinct corners",
            });
        }
        let corners: [u32; 3] = {
            let mut it = counts.keys().copied();
            [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
        };
        for i in 0..3 {
            for j in (i + 1)..3 {
                let a = sides[i].vertices();
                let b = sides[j].vertices();
                if a == b || is_reverse(a, b) {
                    return Err(MorseError::DegenerateTriangle {
                        reason: "two sides are equal",
                    });
                }
                if is_subsegment(a, b) || is_subsegment(b, a) {
                    return Err(MorseError::DegenerateTriangle {
                        reason: "one side is a subsegment of another",
                    });
                }
            }
        }
        Ok(IdealTriangle {
            sides,
            corners,
            gauge_m: None,
        })
    }

    /// Triangle with canonical geodesic sides between three corners.
    pub fn from_corners(s: &PointedSpace, u: u32, v: u32, w: u32) -> Result<Self, MorseError> {
        let sides = [s.geodesic(u, v)?, s.geodesic(v, w)?, s.geodesic(w, u)?];
        IdealTriangle::new(s, sides)
    }

    pub fn with_gauge(mut self, m: f64) -> Self {
        self.gauge_m = Some(m);
        self
    }

    pub fn sides(&self) -> &[Path; 3] {
        &self.sides
    }

    pub fn corners(&self) -> [u32; 3] {
        self.corners
    }

    pub fn gauge(&self) -> Option<f64> {
        self.gauge_m
    }
}

fn is_reverse(a: &[u32], b: &[u32]) -> bool {
    a.len() == b.len() && a.iter().rev().zip(b).all(|(x, y)| x == y)
}

fn is_subsegment(a: &[u32], b: &[u32]) -> bool {
    if a.len() > b.len() {
        return false;
    }
    let rev: Vec<u32> = a.iter().rev().copied().collect();
    b.windows(a.len()).any(|w| w == a || w == rev.as_slice())
}

/// Scaled slimness: max over sides of max over side points x of
/// d(x, other two sides) / kappa(|x|).
pub fn slim_delta(s: &PointedSpace, f: &SublinearFunction, t: &IdealTriangle) -> f64 {
    let mut delta = 0.0f64;
    for i in 0..3 {
        let mut others: Vec<u32> = Vec::new();
        for j in 0..3 {
            if j != i {
                others.extend_from_slice(t.sides[j].vertices());
            }
        }
        others.sort_unstable();
        others.dedup();
        let dist = s.distances_from_set(&others);
        for &x in t.sides[i].vertices() {
            let r = dist[x as usize] as f64 / f.eval(s.depth(x) as f64);
            if r > delta {
                delta = r;
            }
        }
    }
    delta
}

/// Certificate that x is a K-center: its distance to each side, stored for
/// revalidation.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterCertificate {
    pub x: u32,
    pub k: f64,
    /// The triangle's corners, identifying the triple.
    pub triple: [u32; 3],
    pub side_dists: [u32; 3],
}

/// All vertices within K*kappa(|x|) of all three sides, with certificates.
/// An empty result is a finding (K below the slim constant), not an error.
pub fn center_set(
    s: &PointedSpace,
    f: &SublinearFunction,
    t: &IdealTriangle,
    k: f64,
) -> Result<Vec<CenterCertificate>, MorseError> {
    if !k.is_finite() || k < 0.0 {
        return Err(MorseError::BadParameter { reason: "K must be finite and >= 0" });
    }
    let dists: [Vec<u32>; 3] = [
        s.distances_from_set(t.sides[0].vertices()),
        s.distances_from_set(t.sides[1].vertices()),
        s.distances_from_set(t.sides[2].vertices()),
    ];
    let mut out = Vec::new();
    for x in 0..s.vertex_count() as u32 {
        let bound = k * f.eval(s.depth(x) as f64) + 1e-9;
        let d = [
            dists[0][x as usize],
            dists[1][x as usize],
            dists[2][x as usize],
        ];
        if d.iter().all(|&di| (di as f64) <= bound) {
            out.push(CenterCertificate {
                x,
                k,
                triple: t.corners,
                side_dists: d,
            });
        }
    }
    Ok(out)
}

/// Largest d(x,y) / (kappa(|x|) + kappa(|y|)) over center pairs.
pub fn center_diameter_ratio(
    s: &PointedSpace,
    f: &SublinearFunction,
    t: &IdealTriangle,
    k: f64,
) -> Result<f64, MorseError> {
    let centers = center_set(s, f, t, k)?;
    if centers.is_empty() {
        return Err(MorseError::EmptyCenterSet);
    }
    let mut ratio = 0.0f64;
    for (i, a) in centers.iter().enumerate() {
        if i + 1 == centers.len() {
            break;
        }
        let dist = s.distances_from(a.x);
        let ka = f.eval(s.depth(a.x) as f64);
        for b in &centers[i + 1..] {
            let r = dist[b.x as usize] as f64 / (ka + f.eval(s.depth(b.x) as f64));
            if r > ratio {
                ratio = r;
            }
        }
    }
    Ok(ratio)
}

/// One covered vertex in a coverage report: the witnessing direction triple
/// and the verified side distances.
#[derive(Clone, Debug)]
pub struct CenterWitness {
    pub x: u32,
    pub rays: [usize; 3],
    pub side_dists: [u32; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoverageMethod {
    TreeExact,
    Scan,
}

#[derive(Clone, Debug)]
pub struct CoverageReport {
    pub total: usize,
    pub covered: usize,
    pub witnesses: Vec<CenterWitness>,
    pub method: CoverageMethod,
    /// True when the scan hit its per-vertex verification cap somewhere, so
    /// coverage may be under-reported.
    pub truncated: bool,
}

impl CoverageReport {
    pub fn coverage(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        self.covered as f64 / self.total as f64
    }
}

/// Rays from the basepoint to every vertex of the given sphere, walking
/// canonical parents (each ray is a geodesic; on trees it is the unique
/// one). Unit-weight spaces only.
pub fn sphere_rays(s: &PointedSpace, depth: u32) -> Result<Vec<Path>, MorseError> {
    if !s.is_unit_weight() {
        return Err(MorseError::BadParameter {
            reason: "sphere rays need a unit-weight space",
        });
    }
    let mut rays = Vec::new();
    for v in s.sphere(depth) {
        let mut walk = vec![v];
        let mut cur = v;
        while s.depth(cur) > 0 {
            let d = s.depth(cur);
            let parent = *s
                .neighbors(cur)
                .iter()
                .find(|&&w| s.depth(w) + 1 == d)
                .expect("every nonbasepoint vertex has a parent");
            walk.push(parent);
            cur = parent;
        }
        walk.reverse();
        rays.push(Path::new(s, walk)?);
    }
    Ok(rays)
}

/// For every vertex inside the margin, searches direction triples whose
/// triangle has the vertex as a K-center; reports the covered fraction
/// with witnesses. Trees use an exact branch-token criterion; other
/// spaces use a bounded scan over at most 64 directions.
pub fn center_exhaustiveness(
    s: &PointedSpace,
    f: &SublinearFunction,
    k: f64,
    rays: &[Path],
    margin: u32,
) -> Result<CoverageReport, MorseError> {
    if !k.is_finite() || k < 0.0 {
        return Err(MorseError::BadParameter { reason: "K must be finite and >= 0" });
    }
    if margin > s.radius() {
        return Err(MorseError::BadParameter { reason: "margin exceeds the radius" });
    }
    // Distinct ray endpoints are the usable directions.
    let mut corner_ray: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, ray) in rays.iter().enumerate() {
        if ray.first() != s.basepoint() {
            return Err(MorseError::BadParameter {
                reason: "every ray must start at the basepoint",
            });
        }
        if ray.length() != s.depth(ray.last()) {
            return Err(MorseError::NotGeodesic);
        }
        corner_ray.entry(ray.last()).or_insert(i);
    }
    if corner_ray.len() < 3 {
        return Err(MorseError::AtlasTooSmall {
            have: corner_ray.len(),
        });
    }
    let trusted: Vec<u32> = (0..s.vertex_count() as u32)
        .filter(|&v| s.depth(v) <= s.radius() - margin)
        .collect();

    if s.is_tree() && s.is_unit_weight() {
        coverage_tree(s, f, k, &corner_ray, &trusted)
    } else {
        coverage_scan(s, f, k, rays, &corner_ray, &trusted)
    }
}

/// Exact tree criterion. With r = floor(K*kappa(|x|)), a corner within r
/// of x pairs with anything; otherwise its branch token is the vertex at
/// distance r+1 from x toward the corner, and two corners pair iff their
/// tokens differ. x is covered iff (#near corners) + (#distinct tokens)
/// reaches 3.
fn coverage_tree(
    s: &PointedSpace,
    f: &SublinearFunction,
    k: f64,
    corner_ray: &BTreeMap<u32, usize>,
    trusted: &[u32],
) -> Result<CoverageReport, MorseError> {
    let n = s.vertex_count();
    // Canonical parents (the unique depth-decreasing neighbor on a tree).
    let mut parent: Vec<u32> = vec![0; n];
    for v in 0..n as u32 {
        let d = s.depth(v);
        if d == 0 {
            parent[v as usize] = v;
            continue;
        }
        parent[v as usize] = *s
            .neighbors(v)
            .iter()
            .find(|&&w| s.depth(w) + 1 == d)
            .expect("tree parent");
    }
    let ancestor_at = |mut v: u32, target_depth: u32| -> u32 {
        while s.depth(v) > target_depth {
            v = parent[v as usize];
        }
        v
    };
    let lca = |mut a: u32, mut b: u32| -> u32 {
        while s.depth(a) > s.depth(b) {
            a = parent[a as usize];
        }
        while s.depth(b) > s.depth(a) {
            b = parent[b as usize];
        }
        while a != b {
            a = parent[a as usize];
            b = parent[b as usize];
        }
        a
    };
    let tree_dist =
        |a: u32, b: u32| -> u32 { s.depth(a) + s.depth(b) - 2 * s.depth(lca(a, b)) };

    let corners: Vec<(u32, usize)> = corner_ray.iter().map(|(&c, &r)| (c, r)).collect();

    let mut witnesses = Vec::new();
    let mut covered = 0usize;
    for &x in trusted {
        let dx = s.depth(x);
        let r = {
            let b = k * f.eval(dx as f64) + 1e-9;
            if b >= u32::MAX as f64 {
                u32::MAX - 2
            } else {
                b as u32
            }
        };
        // Pick at most one corner per distinct token, near corners first.
        let mut picks: Vec<(u32, usize)> = Vec::new(); // (corner, ray idx)
        let mut tokens: BTreeSet<u32> = BTreeSet::new();
        for &(c, ray) in &corners {
            if picks.len() >= 3 {
                break;
            }
            let l = lca(x, c);
            let d = s.depth(x) + s.depth(c) - 2 * s.depth(l);
            if d <= r {
                picks.push((c, ray));
                continue;
            }
            let up = dx - s.depth(l);
            let token = if r + 1 <= up {
                ancestor_at(x, dx - (r + 1))
            } else {
                ancestor_at(c, 2 * s.depth(l) + r + 1 - dx)
            };
            if tokens.insert(token) {
                picks.push((c, ray));
            }
        }
        if picks.len() < 3 {
            continue;
        }
        // Verify: pairwise Gromov products at x are the exact side
        // distances on a tree.
        let d0 = tree_dist(x, picks[0].0);
        let d1 = tree_dist(x, picks[1].0);
        let d2 = tree_dist(x, picks[2].0);
        let d01 = tree_dist(picks[0].0, picks[1].0);
        let d12 = tree_dist(picks[1].0, picks[2].0);
        let d20 = tree_dist(picks[2].0, picks[0].0);
        let side = [
            (d0 + d1 - d01) / 2,
            (d1 + d2 - d12) / 2,
            (d2 + d0 - d20) / 2,
        ];
        if side.iter().all(|&sd| sd <= r) {
            covered += 1;
            witnesses.push(CenterWitness {
                x,
                rays: [picks[0].1, picks[1].1, picks[2].1],
                side_dists: side,
            });
        }
    }
    Ok(CoverageReport {
        total: trusted.len(),
        covered,
        witnesses,
        method: CoverageMethod::TreeExact,
        truncated: false,
    })
}

/// Bounded scan: pair admissibility is prefiltered by Gromov products
/// (d(x, side) is never below the product), surviving triples are ordered
/// by how close their pairwise midpoints' depths sit to |x|, and each is
/// verified against true distances to the canonical geodesic sides.
fn coverage_scan(
    s: &PointedSpace,
    f: &SublinearFunction,
    k: f64,
    rays: &[Path],
    corner_ray: &BTreeMap<u32, usize>,
    trusted: &[u32],
) -> Result<CoverageReport, MorseError> {
    let corners: Vec<(u32, usize)> = corner_ray.iter().map(|(&c, &r)| (c, r)).collect();
    let d = corners.len();
    if d > SCAN_DIRECTION_MAX {
        return Err(MorseError::TooManyDirections {
            have: d,
            max: SCAN_DIRECTION_MAX,
        });
    }
    let _ = rays;
    let cdist: Vec<Vec<u32>> = corners
        .iter()
        .map(|&(c, _)| s.distances_from(c))
        .collect();

    // Directions whose product at the basepoint reaches depth - margin
    // track each other past the trusted region; they are one boundary
    // point at this resolution and never separate a triple.
    let margin = s.margin() as f64;
    let mut fused: Vec<u64> = vec![0; d];
    for i in 0..d {
        for j in (i + 1)..d {
            let di = s.depth(corners[i].0) as f64;
            let dj = s.depth(corners[j].0) as f64;
            let dij = cdist[i][corners[j].0 as usize] as f64;
            if (di + dj - dij) / 2.0 >= di.min(dj) - margin - 1e-9 {
                fused[i] |= 1 << j;
                fused[j] |= 1 << i;
            }
        }
    }

    // Lazily built canonical sides and their midpoint depths.
    let mut sides: BTreeMap<(usize, usize), Vec<u32>> = BTreeMap::new();
    let mut mid_depth: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    fn side_of(
        sides: &mut BTreeMap<(usize, usize), Vec<u32>>,
        mid_depth: &mut BTreeMap<(usize, usize), u32>,
        corners: &[(u32, usize)],
        i: usize,
        j: usize,
        s: &PointedSpace,
    ) -> Result<(), MorseError> {
        let key = (i.min(j), i.max(j));
        if !sides.contains_key(&key) {
            let g = s.geodesic(corners[key.0].0, corners[key.1].0)?;
            let verts = g.vertices().to_vec();
            let mid = s.depth(verts[verts.len() / 2]);
            sides.insert(key, verts);
            mid_depth.insert(key, mid);
        }
        Ok(())
    }

    let mut witnesses = Vec::new();
    let mut covered = 0usize;
    let mut truncated = false;
    for &x in trusted {
        let bound = k * f.eval(s.depth(x) as f64) + 1e-9;
        // Pair admissibility bitmasks via the product prefilter.
        let mut mask: Vec<u64> = vec![0; d];
        for i in 0..d {
            for j in (i + 1)..d {
                if fused[i] & (1 << j) != 0 {
                    continue;
                }
                let p = (cdist[i][x as usize] + cdist[j][x as usize]) as f64
                    - cdist[i][corners[j].0 as usize] as f64;
                if p / 2.0 <= bound {
                    mask[i] |= 1 << j;
                    mask[j] |= 1 << i;
                }
            }
        }
        let mut triples: Vec<(u32, [usize; 3])> = Vec::new();
        for i in 0..d {
            for j in (i + 1)..d {
                if mask[i] & (1 << j) == 0 {
                    continue;
                }
                let mut common = mask[i] & mask[j] & !((1u64 << (j + 1)) - 1);
                while common != 0 {
                    let t = common.trailing_zeros() as usize;
                    common &= common - 1;
                    side_of(&mut sides, &mut mid_depth, &corners, i, j, s)?;
                    side_of(&mut sides, &mut mid_depth, &corners, j, t, s)?;
                    side_of(&mut sides, &mut mid_depth, &corners, t, i, s)?;
                    let score = [(i, j), (j, t), (i, t)]
                        .iter()
                        .map(|&(a, b)| {
                            let md = mid_depth[&(a.min(b), a.max(b))];
                            md.abs_diff(s.depth(x))
                        })
                        .max()
                        .unwrap();
                    triples.push((score, [i, j, t]));
                }
            }
        }
        triples.sort();
        let cap = if bound >= u32::MAX as f64 {
            u32::MAX - 2
        } else {
            bound as u32
        };
        let dist_x = s.distances_capped(core::slice::from_ref(&x), cap.saturating_add(1));
        let mut found = false;
        for (tried, &(_, [i, j, t])) in triples.iter().enumerate() {
            if tried >= SCAN_VERIFY_CAP {
                truncated = true;
                break;
            }
            let side_min = |a: usize, b: usize| -> u32 {
                let key = (a.min(b), a.max(b));
                sides[&key]
                    .iter()
                    .map(|&v| dist_x[v as usize])
                    .min()
                    .unwrap_or(u32::MAX)
            };
            let sd = [side_min(i, j), side_min(j, t), side_min(t, i)];
            if sd.iter().all(|&v| v != u32::MAX && v as f64 <= bound) {
                covered += 1;
                witnesses.push(CenterWitness {
                    x,
                    rays: [corners[i].1, corners[j].1, corners[t].1],
                    side_dists: sd,
                });
                found = true;
                break;
            }
        }
        let _ = found;
    }
    Ok(CoverageReport {
        total: trusted.len(),
        covered,
        witnesses,
        method: CoverageMethod::Scan,
        truncated,
    })
}

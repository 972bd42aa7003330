//! Additive-error equivalence between pointed balls: scale-step geodesic
//! subdivision, correspondence maps, fitting of multiplicative and
//! kappa-tracked additive constants, coarse inverse defects, center
//! projection of boundary triples, and extension of a boundary matching to
//! a vertex map.
//!
//! The additive error is restricted to the family u(t) = A kappa(t) + B; the
//! fit minimizes A, then B, then the multiplicative constant K over a fixed
//! grid, subject to caps that turn hopeless fits into failure reports.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::{RngCore, SeedableRng};

use crate::boundary::{BoundaryAtlas, BoundaryError};
use crate::kappa::{KappaError, RhoCache, StrictSublinearity, SublinearFunction};
use crate::morse::{center_set, IdealTriangle, MorseError};
use crate::numeric;
use crate::space::{Path, PointedSpace, SpaceError};

/// Multiplicative candidates for the equivalence constant.
pub const K_GRID: [f64; 8] = [1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0];
/// Fits needing a larger kappa coefficient than this are failures.
pub const A_CAP: f64 = 8.0;
/// Reported inverse defects are clamped here.
pub const DEFECT_CAP: f64 = 100.0;
/// Pair enumeration is exhaustive up to this many trusted vertices.
pub const EXHAUSTIVE_VERTEX_MAX: usize = 20_000;
/// Sampled pair estimates must draw at least this many pairs.
pub const MIN_PAIR_SAMPLES: usize = 100;
/// Worst pairs kept in residual tables and failure reports.
pub const RESIDUAL_TABLE_LEN: usize = 10;
/// Directions considered per vertex during extension.
pub const EXTENSION_CANDIDATE_MAX: usize = 24;
/// Largest atlas the extension search precomputes ray distances for.
pub const EXTENSION_DIRECTION_MAX: usize = 512;
/// Cached side distance fields during extension (FIFO eviction).
pub const SIDE_CACHE_MAX: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub enum SbeError {
    BadMap { reason: &'static str },
    BadMatching { reason: &'static str },
    BadParameter { what: &'static str },
    NotAGeodesic,
    NotEnoughSamples { have: usize, need: usize },
    /// No (K, A, B) within the caps satisfies every sampled pair; the worst
    /// offenders ride along.
    NoFiniteFit { a_cap: f64, worst: Vec<PairResidual> },
    EmptyCenterSet { k: f64 },
    AtlasTooSmall,
    TooManyDirections { have: usize, max: usize },
    Space(SpaceError),
    Morse(MorseError),
    Kappa(KappaError),
    Boundary(BoundaryError),
}

impl core::fmt::Display for SbeError {
    fn fmt(&self, fm: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SbeError::BadMap { reason } => write!(fm, "bad correspondence map: {reason}"),
            SbeError::BadMatching { reason } => write!(fm, "bad boundary matching: {reason}"),
            SbeError::BadParameter { what } => write!(fm, "bad parameter: {what}"),
            SbeError::NotAGeodesic => write!(fm, "path is not a geodesic"),
            SbeError::NotEnoughSamples { have, need } => {
                write!(fm, "need at least {need} pair samples, got {have}")
            }
            SbeError::NoFiniteFit { a_cap, .. } => {
                write!(fm, "no admissible fit: kappa coefficient would exceed {a_cap}")
            }
            SbeError::EmptyCenterSet { k } => {
                write!(fm, "center set empty at K = {k}; try a larger K")
            }
            SbeError::AtlasTooSmall => write!(fm, "need at least 3 atlas points"),
            SbeError::TooManyDirections { have, max } => {
                write!(fm, "{have} atlas directions exceed the supported {max}")
            }
            SbeError::Space(e) => write!(fm, "{e}"),
            SbeError::Morse(e) => write!(fm, "{e}"),
            SbeError::Kappa(e) => write!(fm, "{e}"),
            SbeError::Boundary(e) => write!(fm, "{e}"),
        }
    }
}

impl core::error::Error for SbeError {}

impl From<SpaceError> for SbeError {
    fn from(e: SpaceError) -> Self {
        SbeError::Space(e)
    }
}

impl From<MorseError> for SbeError {
    fn from(e: MorseError) -> Self {
        SbeError::Morse(e)
    }
}

impl From<KappaError> for SbeError {
    fn from(e: KappaError) -> Self {
        SbeError::Kappa(e)
    }
}

impl From<BoundaryError> for SbeError {
    fn from(e: BoundaryError) -> Self {
        SbeError::Boundary(e)
    }
}

// ---------------------------------------------------------------------------
// Subdivision

/// Waypoints along a geodesic with steps of size min(remaining, kappa(|x|))
/// rounded down to whole edges (at least one). Gaps never exceed the scale
/// at their left endpoint and always sum to the path length.
pub fn kappa_subdivision(
    s: &PointedSpace,
    f: &SublinearFunction,
    path: &Path,
) -> Result<Vec<u32>, SbeError> {
    if !path.is_geodesic(s) {
        return Err(SbeError::NotAGeodesic);
    }
    let verts = path.vertices();
    let total = path.length() as usize;
    let mut out = vec![verts[0]];
    let mut t = 0usize;
    while t < total {
        let x = verts[t];
        let scale = f.eval(s.depth(x) as f64);
        let remaining = (total - t) as f64;
        // kappa >= 1, so the floor is a positive whole number of edges.
        let step = (numeric::fmin(remaining, scale) as usize).clamp(1, total - t);
        t += step;
        out.push(verts[t]);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Correspondence maps

/// A total vertex map between two pointed balls.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceMap {
    table: Vec<u32>,
}

impl CorrespondenceMap {
    pub fn new(
        domain: &PointedSpace,
        codomain: &PointedSpace,
        table: Vec<u32>,
    ) -> Result<Self, SbeError> {
        if table.len() != domain.vertex_count() {
            return Err(SbeError::BadMap {
                reason: "table must cover every domain vertex",
            });
        }
        if table.iter().any(|&y| y as usize >= codomain.vertex_count()) {
            return Err(SbeError::BadMap {
                reason: "image vertex out of range",
            });
        }
        Ok(CorrespondenceMap { table })
    }

    pub fn identity(s: &PointedSpace) -> Self {
        CorrespondenceMap {
            table: (0..s.vertex_count() as u32).collect(),
        }
    }

    pub fn apply(&self, x: u32) -> u32 {
        self.table[x as usize]
    }

    pub fn table(&self) -> &[u32] {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

fn invert_case(c: char) -> char {
    if c.is_ascii_lowercase() {
        c.to_ascii_uppercase()
    } else {
        c.to_ascii_lowercase()
    }
}

/// Freely reduced word for a vertex label after generator rewrites
/// (e.g. c -> "ab", C -> "BA"). The identity reduces to the empty string.
pub fn normalized_label(label: &str, rewrites: &[(char, &str)]) -> String {
    let mut out: Vec<char> = Vec::new();
    if label != "e" {
        for ch in label.chars() {
            let expansion = rewrites
                .iter()
                .find(|(c, _)| *c == ch)
                .map(|(_, s)| *s);
            match expansion {
                Some(seq) => {
                    for c2 in seq.chars() {
                        if out.last() == Some(&invert_case(c2)) {
                            out.pop();
                        } else {
                            out.push(c2);
                        }
                    }
                }
                None => {
                    if out.last() == Some(&invert_case(ch)) {
                        out.pop();
                    } else {
                        out.push(ch);
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Matches vertices of two labeled balls by rewritten, freely reduced
/// words: the identity on group elements across generating sets.
pub fn correspondence_by_labels(
    domain: &PointedSpace,
    codomain: &PointedSpace,
    rewrites: &[(char, &str)],
) -> Result<CorrespondenceMap, SbeError> {
    let mut index: BTreeMap<String, u32> = BTreeMap::new();
    for y in 0..codomain.vertex_count() as u32 {
        let label = codomain.label(y).ok_or(SbeError::BadMap {
            reason: "codomain carries no labels",
        })?;
        index.insert(normalized_label(label, rewrites), y);
    }
    let mut table = Vec::with_capacity(domain.vertex_count());
    for x in 0..domain.vertex_count() as u32 {
        let label = domain.label(x).ok_or(SbeError::BadMap {
            reason: "domain carries no labels",
        })?;
        match index.get(&normalized_label(label, rewrites)) {
            Some(&y) => table.push(y),
            None => {
                return Err(SbeError::BadMap {
                    reason: "domain element missing from the codomain ball",
                })
            }
        }
    }
    CorrespondenceMap::new(domain, codomain, table)
}

// ---------------------------------------------------------------------------
// Constant estimation

/// One checked pair and the additive error it forces at the chosen K.
#[derive(Clone, Debug, PartialEq)]
pub struct PairResidual {
    pub x: u32,
    pub x2: u32,
    pub dx: u32,
    pub dy: u32,
    /// kappa at the deeper endpoint.
    pub scale: f64,
    /// Required u value: max(0, dy - K dx, dx/K - dy).
    pub gap: f64,
}

/// Fitted constants for (1/K) d(x,x') - u <= d(Fx,Fx') <= K d(x,x') + u
/// with u(t) = A kappa(t) + B evaluated at the deeper endpoint.
#[derive(Clone, Debug)]
pub struct SbeEstimate {
    pub k: f64,
    pub a: f64,
    pub b: f64,
    /// Max over trusted codomain vertices of dist(y, F(X)) / max(u(|y|), 1).
    pub surjectivity_defect: f64,
    /// Worst pairs by forced u value at the chosen K.
    pub residuals: Vec<PairResidual>,
    pub pairs_checked: usize,
    pub exhaustive: bool,
    /// Whether kappa satisfies a strict bound kappa(t) <= C0 t^(1-delta);
    /// annotation only, nothing branches on it.
    pub strictly_sublinear: bool,
}

impl SbeEstimate {
    /// The fitted additive error at scale t.
    pub fn u(&self, f: &SublinearFunction, t: f64) -> f64 {
        self.a * f.eval(t) + self.b
    }
}

/// Pair enumeration shared by the fit and residual passes: exhaustive over
/// trusted vertices when small enough, seeded base-partner sampling
/// otherwise. Yields (x, x2, dx, dy).
fn for_each_pair(
    domain: &PointedSpace,
    codomain: &PointedSpace,
    fmap: &CorrespondenceMap,
    trusted: &[u32],
    exhaustive: bool,
    pair_samples: usize,
    seed: u64,
    mut visit: impl FnMut(u32, u32, u32, u32),
) {
    if exhaustive {
        for (i, &x) in trusted.iter().enumerate() {
            if i + 1 == trusted.len() {
                break;
            }
            let dd = domain.distances_from(x);
            let dc = codomain.distances_from(fmap.apply(x));
            for &x2 in &trusted[i + 1..] {
                visit(
                    x,
                    x2,
                    dd[x2 as usize],
                    dc[fmap.apply(x2) as usize],
                );
            }
        }
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let per_base = 64usize;
        let mut drawn = 0usize;
        while drawn < pair_samples {
            let x = trusted[(rng.next_u64() as usize) % trusted.len()];
            let dd = domain.distances_from(x);
            let dc = codomain.distances_from(fmap.apply(x));
            let mut in_base = 0usize;
            while in_base < per_base && drawn < pair_samples {
                let x2 = trusted[(rng.next_u64() as usize) % trusted.len()];
                in_base += 1;
                if x2 == x {
                    continue;
                }
                visit(x, x2, dd[x2 as usize], dc[fmap.apply(x2) as usize]);
                drawn += 1;
            }
        }
    }
}

fn pair_gap(dx: f64, dy: f64, k: f64) -> f64 {
    numeric::fmax(0.0, numeric::fmax(dy - k * dx, dx / k - dy))
}

/// Fits (K, A, B): per grid K the envelope constraints A kappa(d) + B >= g
/// are aggregated by integer depth, then A is minimized against the B cap,
/// B against that A, and the lexicographically least (A, B, K) wins.
pub fn estimate_sbe(
    domain: &PointedSpace,
    codomain: &PointedSpace,
    fmap: &CorrespondenceMap,
    f: &SublinearFunction,
    pair_samples: usize,
    seed: u64,
) -> Result<SbeEstimate, SbeError> {
    if fmap.len() != domain.vertex_count()
        || fmap.table().iter().any(|&y| y as usize >= codomain.vertex_count())
    {
        return Err(SbeError::BadMap {
            reason: "map does not match the given spaces",
        });
    }
    let trusted: Vec<u32> = (0..domain.vertex_count() as u32)
        .filter(|&x| domain.depth(x) <= domain.trusted_radius())
        .collect();
    if trusted.len() < 2 {
        return Err(SbeError::BadParameter {
            what: "trusted region needs at least two vertices",
        });
    }
    let exhaustive = trusted.len() <= EXHAUSTIVE_VERTEX_MAX;
    if !exhaustive && pair_samples < MIN_PAIR_SAMPLES {
        return Err(SbeError::NotEnoughSamples {
            have: pair_samples,
            need: MIN_PAIR_SAMPLES,
        });
    }

    let max_depth = domain.trusted_radius() as usize;
    let kappas: Vec<f64> = (0..=max_depth).map(|d| f.eval(d as f64)).collect();

    // One g-envelope per K candidate, aggregated by the deeper endpoint's
    // integer depth: kappa is constant on a depth class, so the per-depth
    // max gap is a lossless summary of every constraint.
    let mut envelopes = vec![vec![0.0f64; max_depth + 1]; K_GRID.len()];
    let mut pairs_checked = 0usize;
    for_each_pair(
        domain,
        codomain,
        fmap,
        &trusted,
        exhaustive,
        pair_samples,
        seed,
        |x, x2, dx, dy| {
            pairs_checked += 1;
            let depth = domain.depth(x).max(domain.depth(x2)) as usize;
            for (ki, &k) in K_GRID.iter().enumerate() {
                let g = pair_gap(dx as f64, dy as f64, k);
                if g > envelopes[ki][depth] {
                    envelopes[ki][depth] = g;
                }
            }
        },
    );

    let b_cap = numeric::fmax(2.0, 2.0 * codomain.radius() as f64 / 10.0);
    let mut best: Option<(f64, f64, f64)> = None; // (a, b, k)
    for (ki, &k) in K_GRID.iter().enumerate() {
        let mut a_need = 0.0f64;
        for (d, &g) in envelopes[ki].iter().enumerate() {
            a_need = numeric::fmax(a_need, (g - b_cap) / kappas[d]);
        }
        if a_need > A_CAP + 1e-12 {
            continue;
        }
        let mut b_need = 0.0f64;
        for (d, &g) in envelopes[ki].iter().enumerate() {
            b_need = numeric::fmax(b_need, g - a_need * kappas[d]);
        }
        let better = match best {
            None => true,
            Some((a, b, _)) => {
                a_need + 1e-12 < a || (numeric::abs(a_need - a) <= 1e-12 && b_need + 1e-12 < b)
            }
        };
        if better {
            best = Some((a_need, b_need, k));
        }
    }

    let Some((a, b, k)) = best else {
        // Report the pairs that force the largest kappa coefficient at the
        // laxest K on the grid.
        let k_last = *K_GRID.last().unwrap();
        let mut worst: Vec<PairResidual> = Vec::new();
        for_each_pair(
            domain,
            codomain,
            fmap,
            &trusted,
            exhaustive,
            pair_samples,
            seed,
            |x, x2, dx, dy| {
                let depth = domain.depth(x).max(domain.depth(x2)) as usize;
                let scale = kappas[depth];
                let gap = pair_gap(dx as f64, dy as f64, k_last);
                push_residual(
                    &mut worst,
                    PairResidual { x, x2, dx, dy, scale, gap },
                    |r| (r.gap - b_cap) / r.scale,
                );
            },
        );
        return Err(SbeError::NoFiniteFit { a_cap: A_CAP, worst });
    };

    let mut residuals: Vec<PairResidual> = Vec::new();
    for_each_pair(
        domain,
        codomain,
        fmap,
        &trusted,
        exhaustive,
        pair_samples,
        seed,
        |x, x2, dx, dy| {
            let depth = domain.depth(x).max(domain.depth(x2)) as usize;
            let scale = kappas[depth];
            let gap = pair_gap(dx as f64, dy as f64, k);
            push_residual(
                &mut residuals,
                PairResidual { x, x2, dx, dy, scale, gap },
                |r| r.gap,
            );
        },
    );

    // Def. of the codomain-density defect: how far codomain vertices sit
    // from the image, in units of the fitted u (floored at 1 so an exact
    // fit reports 0 rather than dividing by it).
    let mut image: Vec<u32> = trusted.iter().map(|&x| fmap.apply(x)).collect();
    image.sort_unstable();
    image.dedup();
    let from_image = codomain.distances_from_set(&image);
    let mut surjectivity_defect = 0.0f64;
    for y in 0..codomain.vertex_count() as u32 {
        if codomain.depth(y) > codomain.trusted_radius() {
            continue;
        }
        let u = a * f.eval(codomain.depth(y) as f64) + b;
        let defect = from_image[y as usize] as f64 / numeric::fmax(u, 1.0);
        surjectivity_defect = numeric::fmax(surjectivity_defect, defect);
    }

    Ok(SbeEstimate {
        k,
        a,
        b,
        surjectivity_defect,
        residuals,
        pairs_checked,
        exhaustive,
        strictly_sublinear: matches!(
            f.strict_sublinearity(),
            StrictSublinearity::Holds { .. }
        ),
    })
}

/// Keeps the table sorted descending by score, truncated to the table cap.
fn push_residual(
    table: &mut Vec<PairResidual>,
    r: PairResidual,
    score: impl Fn(&PairResidual) -> f64,
) {
    let s = score(&r);
    let pos = table.partition_point(|q| score(q) >= s);
    if pos < RESIDUAL_TABLE_LEN {
        table.insert(pos, r);
        table.truncate(RESIDUAL_TABLE_LEN);
    }
}

// ---------------------------------------------------------------------------
// Coarse inverse defect

/// How far G(F(x)) returns from x, in units of the fitted u.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseDefect {
    pub defect: f64,
    /// Vertices whose image left the codomain's trusted region.
    pub excluded: usize,
    /// The raw defect exceeded [`DEFECT_CAP`] and was clamped.
    pub capped: bool,
    /// The defect exceeds 1, so G is not a coarse inverse at scale u.
    pub flagged: bool,
    pub worst_vertex: Option<u32>,
}

/// Max over trusted x of d(G(F(x)), x) / max(u(|x|), 1), excluding x whose
/// F-image leaves the codomain's trusted region (reported in the count).
pub fn coarse_inverse_defect(
    domain: &PointedSpace,
    codomain: &PointedSpace,
    fmap: &CorrespondenceMap,
    gmap: &CorrespondenceMap,
    f: &SublinearFunction,
    estimate: &SbeEstimate,
) -> Result<InverseDefect, SbeError> {
    if fmap.len() != domain.vertex_count()
        || fmap.table().iter().any(|&y| y as usize >= codomain.vertex_count())
        || gmap.len() != codomain.vertex_count()
        || gmap.table().iter().any(|&x| x as usize >= domain.vertex_count())
    {
        return Err(SbeError::BadMap {
            reason: "maps do not match the given spaces",
        });
    }
    // Group by the returned vertex so each distinct z costs one search.
    let mut by_return: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut excluded = 0usize;
    for x in 0..domain.vertex_count() as u32 {
        if domain.depth(x) > domain.trusted_radius() {
            continue;
        }
        let y = fmap.apply(x);
        if codomain.depth(y) > codomain.trusted_radius() {
            excluded += 1;
            continue;
        }
        by_return.entry(gmap.apply(y)).or_default().push(x);
    }
    let mut raw = 0.0f64;
    let mut worst_vertex = None;
    for (&z, xs) in &by_return {
        if xs.len() == 1 && xs[0] == z {
            continue;
        }
        let dist = domain.distances_from(z);
        for &x in xs {
            let u = estimate.a * f.eval(domain.depth(x) as f64) + estimate.b;
            let defect = dist[x as usize] as f64 / numeric::fmax(u, 1.0);
            if defect > raw {
                raw = defect;
                worst_vertex = Some(x);
            }
        }
    }
    Ok(InverseDefect {
        defect: numeric::fmin(raw, DEFECT_CAP),
        excluded,
        capped: raw > DEFECT_CAP,
        flagged: raw > 1.0 + 1e-9,
        worst_vertex,
    })
}

// ---------------------------------------------------------------------------
// Balanced triples and center projection

/// Three atlas directions with the worst shortfall of their pairwise
/// products below the target scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BalancedTriple {
    pub indices: [usize; 3],
    /// max(0, rho_target - min pairwise product); 0 means fully balanced.
    pub defect: f64,
}

impl BalancedTriple {
    /// Measures the triple against rho_kappa(|x|) for the intended x.
    pub fn for_scale(
        atlas: &BoundaryAtlas,
        indices: [usize; 3],
        rho_target: f64,
    ) -> Result<Self, SbeError> {
        let [i, j, l] = indices;
        if i == j || j == l || i == l {
            return Err(SbeError::BadParameter {
                what: "triple indices must be distinct",
            });
        }
        if indices.iter().any(|&t| t >= atlas.len()) {
            return Err(SbeError::BadParameter {
                what: "triple index out of range",
            });
        }
        let min_product = numeric::fmin(
            numeric::fmin(atlas.product(i, j), atlas.product(j, l)),
            atlas.product(i, l),
        );
        Ok(BalancedTriple {
            indices,
            defect: numeric::fmax(0.0, rho_target - min_product),
        })
    }
}

/// Deterministic center of the ideal triangle spanned by the triple's ray
/// endpoints: the center of minimal depth, ties broken by vertex id.
pub fn center_projection(
    s: &PointedSpace,
    f: &SublinearFunction,
    atlas: &BoundaryAtlas,
    triple: &BalancedTriple,
    k: f64,
) -> Result<u32, SbeError> {
    let [i, j, l] = triple.indices;
    if triple.indices.iter().any(|&t| t >= atlas.len()) || i == j || j == l || i == l {
        return Err(SbeError::BadParameter {
            what: "triple does not index the atlas",
        });
    }
    let corners = [
        atlas.points()[i].endpoint(),
        atlas.points()[j].endpoint(),
        atlas.points()[l].endpoint(),
    ];
    let t = IdealTriangle::from_corners(s, corners[0], corners[1], corners[2])?;
    let centers = center_set(s, f, &t, k)?;
    centers
        .iter()
        .map(|c| c.x)
        .min_by_key(|&x| (s.depth(x), x))
        .ok_or(SbeError::EmptyCenterSet { k })
}

// ---------------------------------------------------------------------------
// Boundary extension

/// The extension map with its per-vertex audit trail.
#[derive(Clone, Debug)]
pub struct ExtensionOutcome {
    pub map: CorrespondenceMap,
    /// Best balance defect found per domain vertex (also for uncovered
    /// ones); None outside the trusted region or with too few candidates.
    pub defects: Vec<Option<f64>>,
    /// Distance between the outputs of the two best admissible triples.
    pub spreads: Vec<Option<f64>>,
    /// Trusted vertices with no admissible witnessing triple; they map to
    /// the codomain basepoint.
    pub uncovered: Vec<u32>,
}

/// Distance fields from triangle sides, built lazily and evicted FIFO.
struct SideCache {
    fields: BTreeMap<(usize, usize), Vec<u32>>,
    order: VecDeque<(usize, usize)>,
}

impl SideCache {
    fn new() -> Self {
        SideCache {
            fields: BTreeMap::new(),
            order: VecDeque::new(),
        }
    }

    fn distance(
        &mut self,
        s: &PointedSpace,
        atlas: &BoundaryAtlas,
        i: usize,
        j: usize,
        x: u32,
    ) -> Result<u32, SbeError> {
        let key = if i < j { (i, j) } else { (j, i) };
        if !self.fields.contains_key(&key) {
            if self.fields.len() >= SIDE_CACHE_MAX {
                if let Some(old) = self.order.pop_front() {
                    self.fields.remove(&old);
                }
            }
            let side = s.geodesic(
                atlas.points()[key.0].endpoint(),
                atlas.points()[key.1].endpoint(),
            )?;
            self.fields
                .insert(key, s.distances_from_set(side.vertices()));
            self.order.push_back(key);
        }
        Ok(self.fields[&key][x as usize])
    }
}

/// Extends a bijective boundary matching to a vertex map: every trusted
/// domain vertex picks its best balanced witnessing triple (least defect,
/// then lexicographic), pushes it through the matching, and lands on the
/// deterministic center of the image triangle.
///
/// Witnessing means the vertex lies within K kappa(|x|) of all three sides
/// of the triple's ideal triangle; candidate directions are prefiltered by
/// distance to their rays before the exact side checks.
pub fn boundary_extension(
    domain: &PointedSpace,
    codomain: &PointedSpace,
    atlas_x: &BoundaryAtlas,
    atlas_y: &BoundaryAtlas,
    matching: &[usize],
    f: &SublinearFunction,
    k: f64,
    c_bal: f64,
) -> Result<ExtensionOutcome, SbeError> {
    if atlas_x.len() < 3 || atlas_y.len() < 3 {
        return Err(SbeError::AtlasTooSmall);
    }
    if atlas_x.len() > EXTENSION_DIRECTION_MAX {
        return Err(SbeError::TooManyDirections {
            have: atlas_x.len(),
            max: EXTENSION_DIRECTION_MAX,
        });
    }
    if matching.len() != atlas_x.len() {
        return Err(SbeError::BadMatching {
            reason: "matching must cover every domain atlas point",
        });
    }
    let mut seen = vec![false; atlas_y.len()];
    for &m in matching {
        if m >= atlas_y.len() || seen[m] {
            return Err(SbeError::BadMatching {
                reason: "matching must inject into the codomain atlas",
            });
        }
        seen[m] = true;
    }
    if !(k.is_finite() && k >= 0.0 && c_bal.is_finite() && c_bal >= 0.0) {
        return Err(SbeError::BadParameter {
            what: "need K >= 0 and C_bal >= 0",
        });
    }

    let n = domain.vertex_count();
    let trusted_radius = domain.trusted_radius();
    let ray_dists: Vec<Vec<u32>> = atlas_x
        .points()
        .iter()
        .map(|p| domain.distances_from_set(p.ray().vertices()))
        .collect();
    let mut rho_cache = RhoCache::new(f);
    let rho_at: Vec<f64> = (0..=trusted_radius)
        .map(|d| rho_cache.rho(d as f64))
        .collect();

    let mut sides = SideCache::new();
    let mut table = vec![codomain.basepoint(); n];
    let mut defects: Vec<Option<f64>> = vec![None; n];
    let mut spreads: Vec<Option<f64>> = vec![None; n];
    let mut uncovered: Vec<u32> = Vec::new();

    for x in 0..n as u32 {
        let depth = domain.depth(x);
        if depth > trusted_radius {
            continue;
        }
        let scale = f.eval(depth as f64);
        let bound = k * scale + 1e-9;
        // Rays shadow the sides only up to hyperbolicity slack, so the
        // prefilter is generous and the side checks below are exact.
        let prefilter = bound + 2.0 * scale + 2.0;
        let mut cands: Vec<(u32, usize)> = (0..atlas_x.len())
            .filter_map(|i| {
                let d = ray_dists[i][x as usize];
                ((d as f64) <= prefilter).then_some((d, i))
            })
            .collect();
        cands.sort_unstable();
        cands.truncate(EXTENSION_CANDIDATE_MAX);
        let mut cand_idx: Vec<usize> = cands.iter().map(|&(_, i)| i).collect();
        cand_idx.sort_unstable();

        let rho_x = rho_at[depth as usize];
        let mut best: Option<BalancedTriple> = None;
        let mut second: Option<BalancedTriple> = None;
        let mut least_defect: Option<f64> = None;
        for ai in 0..cand_idx.len() {
            for aj in (ai + 1)..cand_idx.len() {
                for al in (aj + 1)..cand_idx.len() {
                    let idx = [cand_idx[ai], cand_idx[aj], cand_idx[al]];
                    let t = BalancedTriple::for_scale(atlas_x, idx, rho_x)?;
                    if least_defect.map_or(true, |d| t.defect < d) {
                        least_defect = Some(t.defect);
                    }
                    if t.defect > c_bal + 1e-9 {
                        continue;
                    }
                    let near = sides.distance(domain, atlas_x, idx[0], idx[1], x)? as f64
                        <= bound
                        && sides.distance(domain, atlas_x, idx[1], idx[2], x)? as f64 <= bound
                        && sides.distance(domain, atlas_x, idx[0], idx[2], x)? as f64 <= bound;
                    if !near {
                        continue;
                    }
                    // Enumeration order is lexicographic, so a strict
                    // improvement test keeps the first best and the next
                    // admissible triple as runner-up.
                    match best {
                        None => best = Some(t),
                        Some(b) if t.defect < b.defect => {
                            second = Some(b);
                            best = Some(t);
                        }
                        Some(_) => {
                            if second.map_or(true, |sec| t.defect < sec.defect) {
                                second = Some(t);
                            }
                        }
                    }
                }
            }
        }
        defects[x as usize] = best.map(|b| b.defect).or(least_defect);

        let Some(chosen) = best else {
            uncovered.push(x);
            continue;
        };
        let image = BalancedTriple {
            indices: [
                matching[chosen.indices[0]],
                matching[chosen.indices[1]],
                matching[chosen.indices[2]],
            ],
            defect: chosen.defect,
        };
        match center_projection(codomain, f, atlas_y, &image, k) {
            Ok(y) => {
                table[x as usize] = y;
                if let Some(sec) = second {
                    let image2 = BalancedTriple {
                        indices: [
                            matching[sec.indices[0]],
                            matching[sec.indices[1]],
                            matching[sec.indices[2]],
                        ],
                        defect: sec.defect,
                    };
                    if let Ok(y2) = center_projection(codomain, f, atlas_y, &image2, k) {
                        spreads[x as usize] = Some(codomain.distance(y, y2)? as f64);
                    }
                }
            }
            Err(SbeError::EmptyCenterSet { .. }) => uncovered.push(x),
            Err(e) => return Err(e),
        }
    }

    Ok(ExtensionOutcome {
        map: CorrespondenceMap::new(domain, codomain, table)?,
        defects,
        spreads,
        uncovered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::sample_boundary;
    use crate::space::GroupPresentation;

    fn free_ball(radius: u32) -> PointedSpace {
        PointedSpace::cayley_ball(&GroupPresentation::free(2), radius)
            .unwrap()
            .with_margin(0)
    }

    fn line_space(len: u32) -> PointedSpace {
        let edges: Vec<(u32, u32, u32)> = (0..len).map(|i| (i, i + 1, 1)).collect();
        PointedSpace::from_edges(&edges, 0).unwrap().with_margin(0)
    }

    fn atlas_at(s: &PointedSpace, f: &SublinearFunction, depth: u32) -> BoundaryAtlas {
        let points = sample_boundary(s, f, depth, None, 0).unwrap().points;
        BoundaryAtlas::build(s, f, points, Some(1.0)).unwrap()
    }

    #[test]
    fn unit_kappa_subdivision_visits_every_vertex() {
        let s = free_ball(6);
        let f = SublinearFunction::constant(1.0).unwrap();
        let deep = s.sphere(6)[0];
        let path = s.geodesic(s.basepoint(), deep).unwrap();
        let points = kappa_subdivision(&s, &f, &path).unwrap();
        assert_eq!(points, path.vertices());
    }

    #[test]
    fn zero_length_subdivision_is_the_single_vertex() {
        let s = free_ball(3);
        let f = SublinearFunction::log();
        let path = Path::new(&s, vec![s.basepoint()]).unwrap();
        assert_eq!(kappa_subdivision(&s, &f, &path).unwrap(), vec![s.basepoint()]);
    }

    #[test]
    fn sqrt_kappa_steps_grow_and_sum_to_the_length() {
        let s = line_space(400);
        let f = SublinearFunction::power(0.5).unwrap();
        let path = s.geodesic(0, 400).unwrap();
        let points = kappa_subdivision(&s, &f, &path).unwrap();
        let mut total = 0u32;
        let mut max_step = 0u32;
        for w in points.windows(2) {
            let gap = s.distance(w[0], w[1]).unwrap();
            assert!(gap as f64 <= f.eval(s.depth(w[0]) as f64) + 1e-9);
            total += gap;
            max_step = max_step.max(gap);
        }
        assert_eq!(total, 400);
        assert!(max_step >= 15, "steps should grow like sqrt: {max_step}");
        assert!(points.len() as u32 <= 401);
    }

    #[test]
    fn non_geodesics_are_rejected() {
        let s = free_ball(3);
        let f = SublinearFunction::constant(1.0).unwrap();
        let a = s.neighbors(s.basepoint())[0];
        let back = Path::new(&s, vec![s.basepoint(), a, s.basepoint()]).unwrap();
        assert_eq!(
            kappa_subdivision(&s, &f, &back),
            Err(SbeError::NotAGeodesic)
        );
    }

    #[test]
    fn identity_estimate_is_exact() {
        let s = free_ball(4);
        let f = SublinearFunction::constant(1.0).unwrap();
        let id = CorrespondenceMap::identity(&s);
        let est = estimate_sbe(&s, &s, &id, &f, 0, 0).unwrap();
        assert!(est.exhaustive);
        assert_eq!(est.k, 1.0);
        assert_eq!(est.a, 0.0);
        assert_eq!(est.b, 0.0);
        assert_eq!(est.surjectivity_defect, 0.0);
        assert!(est.strictly_sublinear);
    }

    #[test]
    fn collapse_map_yields_a_failure_report() {
        let s = line_space(400);
        let f = SublinearFunction::constant(1.0).unwrap();
        let collapse =
            CorrespondenceMap::new(&s, &s, vec![0; s.vertex_count()]).unwrap();
        let err = estimate_sbe(&s, &s, &collapse, &f, 0, 0).unwrap_err();
        let SbeError::NoFiniteFit { worst, .. } = err else {
            panic!("expected a failure report, got {err:?}");
        };
        assert!(!worst.is_empty());
        // The lower bound fails hardest for the farthest pairs.
        assert!(worst[0].dx > 100);
        for w in worst.windows(2) {
            assert!(w[0].gap >= w[1].gap);
        }
    }

    #[test]
    fn label_matching_identifies_elements_across_generating_sets() {
        let x = PointedSpace::cayley_ball(&GroupPresentation::free(2), 3).unwrap();
        let y =
            PointedSpace::cayley_ball(&GroupPresentation::free2_with_ab(), 3).unwrap();
        let rewrites = [('c', "ab"), ('C', "BA")];
        let map = correspondence_by_labels(&x, &y, &rewrites).unwrap();
        for v in 0..x.vertex_count() as u32 {
            let lx = normalized_label(x.label(v).unwrap(), &rewrites);
            let ly = normalized_label(y.label(map.apply(v)).unwrap(), &rewrites);
            assert_eq!(lx, ly);
            // The new generating set contains the old one, so depths only
            // shrink, and at most by half.
            let dx = x.depth(v);
            let dy = y.depth(map.apply(v));
            assert!(dy <= dx && dx <= 2 * dy || dx == 0);
        }
    }

    #[test]
    fn sampled_estimates_are_deterministic_in_the_seed() {
        // 39367 vertices, past the exhaustive cutoff.
        let s = free_ball(9);
        let f = SublinearFunction::log();
        let id = CorrespondenceMap::identity(&s);
        let e1 = estimate_sbe(&s, &s, &id, &f, 500, 7).unwrap();
        let e2 = estimate_sbe(&s, &s, &id, &f, 500, 7).unwrap();
        assert!(!e1.exhaustive);
        assert_eq!(e1.k, e2.k);
        assert_eq!(e1.a, e2.a);
        assert_eq!(e1.b, e2.b);
        assert_eq!(e1.residuals, e2.residuals);
        assert!(matches!(
            estimate_sbe(&s, &s, &id, &f, 50, 7),
            Err(SbeError::NotEnoughSamples { have: 50, need: 100 })
        ));
    }

    #[test]
    fn exact_inverse_has_zero_defect_and_constant_map_is_flagged() {
        let s = free_ball(4);
        let f = SublinearFunction::constant(1.0).unwrap();
        let id = CorrespondenceMap::identity(&s);
        let est = estimate_sbe(&s, &s, &id, &f, 0, 0).unwrap();
        let exact = coarse_inverse_defect(&s, &s, &id, &id, &f, &est).unwrap();
        assert_eq!(exact.defect, 0.0);
        assert_eq!(exact.excluded, 0);
        assert!(!exact.flagged);

        let constant =
            CorrespondenceMap::new(&s, &s, vec![0; s.vertex_count()]).unwrap();
        let bad = coarse_inverse_defect(&s, &s, &id, &constant, &f, &est).unwrap();
        assert!(bad.flagged);
        assert!(bad.defect > 1.0);
        assert!(bad.defect <= DEFECT_CAP);
    }

    #[test]
    fn center_projection_finds_the_tripod_median() {
        let s = free_ball(5);
        let f = SublinearFunction::constant(1.0).unwrap();
        let atlas = atlas_at(&s, &f, 4);
        // Pick directions splitting pairwise at known depths: two rays
        // sharing a depth-3 ancestor and one splitting at the root.
        let e0 = atlas.points()[0].ray().vertices()[3];
        let mut i2 = None;
        let mut i3 = None;
        for (i, p) in atlas.points().iter().enumerate().skip(1) {
            let ray = p.ray().vertices();
            if ray[3] == e0 && i2.is_none() {
                i2 = Some(i);
            }
            if ray[1] != atlas.points()[0].ray().vertices()[1] && i3.is_none() {
                i3 = Some(i);
            }
        }
        let triple =
            BalancedTriple::for_scale(&atlas, [0, i2.unwrap(), i3.unwrap()], 3.0).unwrap();
        let median = center_projection(&s, &f, &atlas, &triple, 0.0).unwrap();
        // The median of the tripod is the deep branch vertex.
        assert_eq!(median, e0);

        // K=2 relaxes the center set toward the basepoint; the projection
        // stays within 2 kappa of the median along its branch.
        let relaxed = center_projection(&s, &f, &atlas, &triple, 2.0).unwrap();
        assert!(s.depth(relaxed) <= s.depth(median));
        assert!(s.distance(relaxed, median).unwrap() <= 2 + 2);
    }

    #[test]
    fn flat_triangles_have_empty_center_sets_at_zero_k() {
        let z2 = PointedSpace::cayley_ball(&GroupPresentation::z2(), 4)
            .unwrap()
            .with_margin(0);
        let f = SublinearFunction::constant(1.0).unwrap();
        let points = sample_boundary(&z2, &f, 3, None, 0).unwrap().points;
        let atlas = BoundaryAtlas::build(&z2, &f, points, Some(0.5)).unwrap();
        let mut saw_empty = false;
        'outer: for i in 0..atlas.len() {
            for j in (i + 1)..atlas.len() {
                for l in (j + 1)..atlas.len() {
                    let t = BalancedTriple::for_scale(&atlas, [i, j, l], 0.0).unwrap();
                    match center_projection(&z2, &f, &atlas, &t, 0.0) {
                        Err(SbeError::EmptyCenterSet { .. }) => {
                            saw_empty = true;
                            break 'outer;
                        }
                        Ok(_) => continue,
                        Err(e) => panic!("unexpected error {e:?}"),
                    }
                }
            }
        }
        assert!(saw_empty, "some flat triple should have no exact center");
    }

    #[test]
    fn tiny_atlases_are_rejected() {
        let s = free_ball(4);
        let f = SublinearFunction::constant(1.0).unwrap();
        let atlas = atlas_at(&s, &f, 3);
        let err = boundary_extension(&s, &s, &atlas, &atlas, &[0], &f, 2.0, 2.0);
        assert!(matches!(err, Err(SbeError::BadMatching { .. })));
        let two = sample_boundary(&s, &f, 3, Some(2), 0).unwrap().points;
        let small = BoundaryAtlas::build(&s, &f, two, Some(1.0)).unwrap();
        let err = boundary_extension(&s, &s, &small, &small, &[0, 1], &f, 2.0, 2.0);
        assert!(matches!(err, Err(SbeError::AtlasTooSmall)));
    }
}

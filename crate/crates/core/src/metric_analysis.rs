//! Dimension estimators and quasisymmetry distortion tools for finite
//! metric spaces: bracketed covering numbers, lower Assouad and box
//! dimension fits, warped metrics, and distortion profiles.
//!
//! Covering numbers are bracketed by a greedy net (upper) and a strictly
//! 2r-separated packing (lower); exact set cover runs only on balls of at
//! most 20 points. Dimension fits aggregate worst-case over basepoints and
//! use the bracket side that cannot overstate the claimed inequality.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::{RngCore, SeedableRng};

use crate::boundary::{frink_metrize, BoundaryError, QuasiMetric};
use crate::kappa::{KappaError, SublinearFunction};
use crate::numeric;

/// Balls with at most this many points get an exact set-cover count.
pub const EXACT_COVER_MAX: usize = 20;
/// Distortion profiles scan all triples up to this size, sampling above.
pub const DISTORTION_EXHAUSTIVE_MAX: usize = 300;
/// Seeded triples drawn when a distortion profile has to sample.
pub const DISTORTION_SAMPLES: usize = 200_000;
/// Hard cap on dense metric spaces; validation is cubic.
pub const METRIC_POINT_MAX: usize = 1024;
/// Relative slack for ball membership and scale comparisons.
pub const SCALE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum MetricError {
    BadMatrix { reason: &'static str },
    BadScales { what: &'static str },
    TooManyPoints { have: usize, max: usize },
    MismatchedPoints,
    /// The warped quasimetric's constant exceeds 2, so chain metrization
    /// does not apply; use a smaller epsilon.
    NotMetrizable { constant: f64 },
    Boundary(BoundaryError),
    Kappa(KappaError),
}

impl core::fmt::Display for MetricError {
    fn fmt(&self, fm: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MetricError::BadMatrix { reason } => write!(fm, "bad metric matrix: {reason}"),
            MetricError::BadScales { what } => write!(fm, "bad scales: {what}"),
            MetricError::TooManyPoints { have, max } => {
                write!(fm, "{have} points exceed the supported {max}")
            }
            MetricError::MismatchedPoints => {
                write!(fm, "the two spaces must share one point set")
            }
            MetricError::NotMetrizable { constant } => write!(
                fm,
                "warped quasi-triangle constant {constant} exceeds 2; use a smaller epsilon"
            ),
            MetricError::Boundary(e) => write!(fm, "{e}"),
            MetricError::Kappa(e) => write!(fm, "scale function error: {e}"),
        }
    }
}

impl core::error::Error for MetricError {}

impl From<BoundaryError> for MetricError {
    fn from(e: BoundaryError) -> Self {
        MetricError::Boundary(e)
    }
}

impl From<KappaError> for MetricError {
    fn from(e: KappaError) -> Self {
        MetricError::Kappa(e)
    }
}

// ---------------------------------------------------------------------------
// Finite metric spaces

/// A validated finite metric space: symmetric, zero diagonal, positive
/// off-diagonal, triangle inequality up to rounding in the sums.
#[derive(Clone, Debug)]
pub struct FiniteMetricSpace {
    n: usize,
    d: Vec<f64>,
}

impl FiniteMetricSpace {
    pub fn from_matrix(n: usize, d: Vec<f64>) -> Result<Self, MetricError> {
        if n == 0 {
            return Err(MetricError::BadMatrix {
                reason: "need at least one point",
            });
        }
        if n > METRIC_POINT_MAX {
            return Err(MetricError::TooManyPoints {
                have: n,
                max: METRIC_POINT_MAX,
            });
        }
        if d.len() != n * n {
            return Err(MetricError::BadMatrix {
                reason: "matrix length is not n*n",
            });
        }
        let mut scale = 0.0_f64;
        for &x in &d {
            if !x.is_finite() || x < 0.0 {
                return Err(MetricError::BadMatrix {
                    reason: "entries must be finite and nonnegative",
                });
            }
            scale = numeric::fmax(scale, x);
        }
        let tol = 1e-12 * numeric::fmax(scale, 1.0);
        for i in 0..n {
            if d[i * n + i] > tol {
                return Err(MetricError::BadMatrix {
                    reason: "diagonal must be zero",
                });
            }
            for j in (i + 1)..n {
                if numeric::abs(d[i * n + j] - d[j * n + i]) > tol {
                    return Err(MetricError::BadMatrix {
                        reason: "matrix must be symmetric",
                    });
                }
                if d[i * n + j] <= tol {
                    return Err(MetricError::BadMatrix {
                        reason: "distinct points need positive distance",
                    });
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if d[i * n + k] > d[i * n + j] + d[j * n + k] + tol {
                        return Err(MetricError::BadMatrix {
                            reason: "triangle inequality fails",
                        });
                    }
                }
            }
        }
        Ok(FiniteMetricSpace { n, d })
    }

    /// Adopts a quasimetric that already satisfies the triangle inequality,
    /// e.g. chain-metrization output.
    pub fn from_quasimetric(qm: &QuasiMetric) -> Result<Self, MetricError> {
        if !qm.is_metric() {
            return Err(MetricError::BadMatrix {
                reason: "quasimetric violates the triangle inequality",
            });
        }
        if qm.len() > METRIC_POINT_MAX {
            return Err(MetricError::TooManyPoints {
                have: qm.len(),
                max: METRIC_POINT_MAX,
            });
        }
        Ok(FiniteMetricSpace {
            n: qm.len(),
            d: qm.entries().to_vec(),
        })
    }

    /// Points on the line with the absolute-value metric.
    pub fn from_points_1d(xs: &[f64]) -> Result<Self, MetricError> {
        let n = xs.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = numeric::abs(xs[i] - xs[j]);
            }
        }
        Self::from_matrix(n, d)
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

    /// Indices of the closed ball around x.
    pub fn ball(&self, x: usize, radius: f64) -> Vec<usize> {
        let bound = radius * (1.0 + SCALE_SLACK);
        (0..self.n).filter(|&y| self.at(x, y) <= bound).collect()
    }
}

/// The finite ternary Cantor approximation: all 2^level sums of 2*3^-i
/// over subsets of {1..level}, ascending.
pub fn cantor_points(level: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(1usize << level);
    for mask in 0u32..(1u32 << level) {
        let mut x = 0.0;
        for i in 1..=level {
            if mask & (1 << (i - 1)) != 0 {
                x += 2.0 * numeric::powf(3.0, -(i as f64));
            }
        }
        out.push(x);
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    out
}

// ---------------------------------------------------------------------------
// Covering numbers

/// Bracketed covering count of a ball by radius-r balls centered at points:
/// a strictly 2r-separated packing (lower), a greedy net (upper), and the
/// exact optimum when the ball has at most [`EXACT_COVER_MAX`] points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoveringBracket {
    pub lower: usize,
    pub upper: usize,
    pub exact: Option<usize>,
}

impl CoveringBracket {
    /// The side safe for lower-dimension claims: exact if known, else the
    /// packing lower bound.
    pub fn conservative(&self) -> usize {
        self.exact.unwrap_or(self.lower)
    }
}

/// N_r(B(x, R)): how many radius-r balls cover the radius-R ball around x.
pub fn covering_number(
    ms: &FiniteMetricSpace,
    x: usize,
    big_r: f64,
    r: f64,
) -> Result<CoveringBracket, MetricError> {
    if x >= ms.n {
        return Err(MetricError::BadScales {
            what: "basepoint index out of range",
        });
    }
    if !(big_r.is_finite() && r.is_finite()) || r <= 0.0 || r >= big_r {
        return Err(MetricError::BadScales {
            what: "need 0 < r < R",
        });
    }
    let members = ms.ball(x, big_r);
    let cover_bound = r * (1.0 + SCALE_SLACK);
    let sep_bound = 2.0 * r * (1.0 + SCALE_SLACK);

    // Greedy net: repeatedly center a ball at the lowest uncovered point.
    let mut covered = vec![false; members.len()];
    let mut upper = 0usize;
    for i in 0..members.len() {
        if covered[i] {
            continue;
        }
        upper += 1;
        for j in i..members.len() {
            if !covered[j] && ms.at(members[i], members[j]) <= cover_bound {
                covered[j] = true;
            }
        }
    }

    // Greedy packing: points pairwise further than 2r apart. Any radius-r
    // ball has diameter at most 2r, so it holds at most one of them.
    let mut picked: Vec<usize> = Vec::new();
    for &m in &members {
        if picked.iter().all(|&p| ms.at(m, p) > sep_bound) {
            picked.push(m);
        }
    }
    let mut lower = picked.len();

    let exact = if members.len() <= EXACT_COVER_MAX {
        let m = members.len();
        let full: u32 = if m == 32 { u32::MAX } else { (1u32 << m) - 1 };
        let cover_mask: Vec<u32> = (0..m)
            .map(|c| {
                let mut mask = 0u32;
                for(bi, &y) in members.iter().enumerate() {
                    if ms.at(members[c], y) <= cover_bound {
                        mask |= 1 << bi;
                    }
                }
                mask
            })
            .collect();
        let mut dp = vec![u8::MAX; 1usize << m];
        dp[0] = 0;
        for mask in 0..(1usize << m) {
            if dp[mask] == u8::MAX || mask as u32 == full {
                continue;
            }
            let need = (!(mask as u32) & full).trailing_zeros() as usize;
            for c in 0..m {
                if cover_mask[c] & (1 << need) != 0 {
                    let next = mask | cover_mask[c] as usize;
                    dp[next] = dp[next].min(dp[mask] + 1);
                }
            }
        }
        Some(dp[full as usize] as usize)
    } else {
        None
    };
    if let Some(e) = exact {
        // The optimum is a valid packing-side improvement.
        lower = lower.max(e.min(upper));
    }
    debug_assert!(lower <= upper);
    Ok(CoveringBracket { lower, upper, exact })
}

// ---------------------------------------------------------------------------
// Dimension fits

/// Scale pairs, worst-case covering counts, and the fitted exponent s with
/// its constant c, so that every sampled count is at least c (R/r)^s.
#[derive(Clone, Debug)]
pub struct DimensionReport {
    pub pairs: Vec<(f64, f64)>,
    pub counts: Vec<usize>,
    pub s: f64,
    pub c: f64,
}

/// Fits (R, r, N) covering samples: counts are min-aggregated per scale
/// pair, the exponent is the log-log least-squares slope, and c is lowered
/// until N >= c (R/r)^s holds for every aggregated pair.
pub fn lower_assouad_from_samples(
    samples: &[(f64, f64, usize)],
) -> Result<DimensionReport, MetricError> {
    let mut agg: Vec<(f64, f64, usize)> = Vec::new();
    for &(big_r, r, count) in samples {
        if !(big_r.is_finite() && r.is_finite()) || r <= 0.0 || r >= big_r {
            return Err(MetricError::BadScales {
                what: "need 0 < r < R in every sample",
            });
        }
        if count == 0 {
            return Err(MetricError::BadScales {
                what: "covering counts must be at least 1",
            });
        }
        match agg.iter_mut().find(|(br, rr, _)| *br == big_r && *rr == r) {
            Some(slot) => slot.2 = slot.2.min(count),
            None => agg.push((big_r, r, count)),
        }
    }
    if agg.len() < 3 {
        return Err(MetricError::BadScales {
            what: "need at least 3 distinct scale pairs",
        });
    }
    let ratios: Vec<f64> = agg.iter().map(|&(big_r, r, _)| big_r / r).collect();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for &t in &ratios {
        lo = numeric::fmin(lo, t);
        hi = numeric::fmax(hi, t);
    }
    if hi / lo < 100.0 * (1.0 - SCALE_SLACK) {
        return Err(MetricError::BadScales {
            what: "scale ratios must span two decades",
        });
    }

    let xs: Vec<f64> = ratios.iter().map(|&t| numeric::ln(t)).collect();
    let ys: Vec<f64> = agg.iter().map(|&(_, _, n)| numeric::ln(n as f64)).collect();
    let m = xs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let var = sxx - sx * sx / m;
    let slope = (sxy - sx * sy / m) / var;
    let s = numeric::fmax(slope, 0.0);
    let mut c = f64::INFINITY;
    for (&(_, _, n), &t) in agg.iter().zip(ratios.iter()) {
        c = numeric::fmin(c, n as f64 / numeric::powf(t, s));
    }
    Ok(DimensionReport {
        pairs: agg.iter().map(|&(big_r, r, _)| (big_r, r)).collect(),
        counts: agg.iter().map(|&(_, _, n)| n).collect(),
        s,
        c,
    })
}

/// Lower Assouad exponent from worst-case covering counts over every
/// basepoint at the given scale pairs. Counts take the conservative
/// bracket side, so the fit cannot overstate the dimension.
pub fn lower_assouad_estimate(
    ms: &FiniteMetricSpace,
    scale_pairs: &[(f64, f64)],
) -> Result<DimensionReport, MetricError> {
    let diam = ms.diameter();
    let res = ms.min_positive();
    let mut samples = Vec::new();
    for &(big_r, r) in scale_pairs {
        if !(r < big_r && r > 0.0) {
            return Err(MetricError::BadScales {
                what: "need 0 < r < R",
            });
        }
        if big_r > diam * (1.0 + SCALE_SLACK) || r < res * (1.0 - SCALE_SLACK) {
            return Err(MetricError::BadScales {
                what: "scales outside the space's resolvable range",
            });
        }
        for x in 0..ms.n {
            let bracket = covering_number(ms, x, big_r, r)?;
            samples.push((big_r, r, bracket.conservative()));
        }
    }
    lower_assouad_from_samples(&samples)
}

/// log 2 / log(2S + 1): the dimension bound a uniform perfectness constant
/// S implies.
pub fn up_dimension_bound(s: f64) -> Result<f64, MetricError> {
    if !s.is_finite() || s <= 1.0 {
        return Err(MetricError::BadScales {
            what: "perfectness constant must exceed 1",
        });
    }
    Ok(core::f64::consts::LN_2 / numeric::ln(2.0 * s + 1.0))
}

/// Log-log slope of global covering numbers over the radius grid, using
/// the greedy-net upper side.
pub fn box_dimension(ms: &FiniteMetricSpace, r_grid: &[f64]) -> Result<f64, MetricError> {
    if r_grid.len() < 3 {
        return Err(MetricError::BadScales {
            what: "need at least 3 radii",
        });
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for &r in r_grid {
        if !r.is_finite() || r <= 0.0 {
            return Err(MetricError::BadScales {
                what: "radii must be positive",
            });
        }
        lo = numeric::fmin(lo, r);
        hi = numeric::fmax(hi, r);
    }
    if hi / lo < 100.0 * (1.0 - SCALE_SLACK) {
        return Err(MetricError::BadScales {
            what: "radius grid must span two decades",
        });
    }
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &r in r_grid {
        let bound = r * (1.0 + SCALE_SLACK);
        let mut covered = vec![false; ms.n];
        let mut count = 0usize;
        for i in 0..ms.n {
            if covered[i] {
                continue;
            }
            count += 1;
            for j in i..ms.n {
                if !covered[j] && ms.at(i, j) <= bound {
                    covered[j] = true;
                }
            }
        }
        let x = numeric::ln(1.0 / r);
        let y = numeric::ln(count as f64);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let m = r_grid.len() as f64;
    let var = sxx - sx * sx / m;
    let slope = (sxy - sx * sy / m) / var;
    Ok(numeric::fmax(slope, 0.0))
}

// ---------------------------------------------------------------------------
// Warped metrics

/// phi(t) = exp(-eps * rho((1/a) ln(1/t))) for t in (0, 1].
pub fn warp_function(
    f: &SublinearFunction,
    eps: f64,
    a: f64,
    t: f64,
) -> Result<f64, MetricError> {
    if !(eps.is_finite() && eps > 0.0 && a.is_finite() && a > 0.0) {
        return Err(MetricError::BadScales {
            what: "need eps > 0 and a > 0",
        });
    }
    if !(t > 0.0 && t <= 1.0) {
        return Err(MetricError::BadScales {
            what: "warp argument must lie in (0, 1]",
        });
    }
    let rho = f.rho(numeric::ln(1.0 / t) / a)?.value;
    Ok(numeric::exp(-eps * rho))
}

/// A warped space: the chain-metrized result, the divisor applied when the
/// input exceeded diameter 1, and the warp's quasi-triangle constant.
#[derive(Clone, Debug)]
pub struct WarpOutcome {
    pub space: FiniteMetricSpace,
    pub rescaled_by: Option<f64>,
    pub quasi_constant: f64,
}

/// Applies phi entrywise. Distances above 1 are first divided by the
/// diameter (recorded). The warped matrix is validated as a quasimetric
/// and chain-metrized; a quasi-triangle constant above 2 is an error.
pub fn warp_metric(
    ms: &FiniteMetricSpace,
    f: &SublinearFunction,
    eps: f64,
    a: f64,
) -> Result<WarpOutcome, MetricError> {
    if ms.n < 2 {
        return Err(MetricError::BadScales {
            what: "need at least two points to warp",
        });
    }
    let diam = ms.diameter();
    let rescaled_by = if diam > 1.0 { Some(diam) } else { None };
    let scale = rescaled_by.unwrap_or(1.0);
    let n = ms.n;
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i * n + j] = warp_function(f, eps, a, ms.at(i, j) / scale)?;
            }
        }
    }
    let qm = QuasiMetric::from_matrix(n, d)?;
    let quasi_constant = qm.constant();
    if quasi_constant > 2.0 + 1e-9 {
        return Err(MetricError::NotMetrizable {
            constant: quasi_constant,
        });
    }
    let metric = frink_metrize(&qm)?;
    Ok(WarpOutcome {
        space: FiniteMetricSpace::from_quasimetric(&metric)?,
        rescaled_by,
        quasi_constant,
    })
}

/// Largest phi(2t)/phi(t) over the grid points with 2t still in (0, 1].
pub fn warp_doubling_constant(
    f: &SublinearFunction,
    eps: f64,
    a: f64,
    t_grid: &[f64],
) -> Result<f64, MetricError> {
    let mut c = 1.0_f64;
    let mut any = false;
    for &t in t_grid {
        if t <= 0.0 || 2.0 * t > 1.0 {
            continue;
        }
        let ratio = warp_function(f, eps, a, 2.0 * t)? / warp_function(f, eps, a, t)?;
        c = numeric::fmax(c, ratio);
        any = true;
    }
    if !any {
        return Err(MetricError::BadScales {
            what: "no grid point has 2t within (0, 1]",
        });
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Quasisymmetry distortion

/// Measured distortion H(t) on a grid, optionally compared against the
/// reference curve eta(t) = max(1, C t^(log2 C)).
#[derive(Clone, Debug)]
pub struct DistortionProfile {
    pub t_grid: Vec<f64>,
    pub h: Vec<f64>,
    pub eta: Option<Vec<f64>>,
    pub exceeds_eta: bool,
    pub exhaustive: bool,
}

/// For each t: the largest d2(x,a)/d2(x,b) over triples with
/// d1(x,a) <= t d1(x,b). Exhaustive up to [`DISTORTION_EXHAUSTIVE_MAX`]
/// points, seeded sampling above. `eta_c` draws the reference curve.
pub fn qs_distortion(
    ms1: &FiniteMetricSpace,
    ms2: &FiniteMetricSpace,
    t_grid: &[f64],
    eta_c: Option<f64>,
    seed: u64,
) -> Result<DistortionProfile, MetricError> {
    if ms1.n != ms2.n {
        return Err(MetricError::MismatchedPoints);
    }
    let n = ms1.n;
    if n < 3 {
        return Err(MetricError::BadScales {
            what: "need at least three points",
        });
    }
    if t_grid.is_empty() || t_grid.iter().any(|&t| !t.is_finite() || t <= 0.0) {
        return Err(MetricError::BadScales {
            what: "t grid must be positive",
        });
    }
    if let Some(c) = eta_c {
        if !c.is_finite() || c < 1.0 {
            return Err(MetricError::BadScales {
                what: "doubling constant must be at least 1",
            });
        }
    }

    let exhaustive = n <= DISTORTION_EXHAUSTIVE_MAX;
    let mut h = vec![0.0_f64; t_grid.len()];
    let mut visit = |x: usize, a: usize, b: usize| {
        let r1 = ms1.at(x, a) / ms1.at(x, b);
        let r2 = ms2.at(x, a) / ms2.at(x, b);
        for (slot, &t) in h.iter_mut().zip(t_grid.iter()) {
            if r1 <= t * (1.0 + SCALE_SLACK) && r2 > *slot {
                *slot = r2;
            }
        }
    };
    if exhaustive {
        for x in 0..n {
            for a in 0..n {
                if a == x {
                    continue;
                }
                for b in 0..n {
                    if b != x && b != a {
                        visit(x, a, b);
                    }
                }
            }
        }
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut drawn = 0usize;
        while drawn < DISTORTION_SAMPLES {
            let x = (rng.next_u64() as usize) % n;
            let a = (rng.next_u64() as usize) % n;
            let b = (rng.next_u64() as usize) % n;
            if x == a || x == b || a == b {
                continue;
            }
            visit(x, a, b);
            drawn += 1;
        }
    }

    let eta = eta_c.map(|c| {
        let exponent = numeric::ln(c) / core::f64::consts::LN_2;
        t_grid
            .iter()
            .map(|&t| numeric::fmax(1.0, c * numeric::powf(t, exponent)))
            .collect::<Vec<f64>>()
    });
    let exceeds_eta = match &eta {
        Some(curve) => h
            .iter()
            .zip(curve.iter())
            .any(|(&hv, &ev)| hv > ev * (1.0 + SCALE_SLACK)),
        None => false,
    };
    Ok(DistortionProfile {
        t_grid: t_grid.to_vec(),
        h,
        eta,
        exceeds_eta,
        exhaustive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> FiniteMetricSpace {
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        FiniteMetricSpace::from_points_1d(&xs).unwrap()
    }

    #[test]
    fn matrix_validation_rejects_non_metrics() {
        let asym = FiniteMetricSpace::from_matrix(2, vec![0.0, 1.0, 0.5, 0.0]);
        assert!(matches!(asym, Err(MetricError::BadMatrix { .. })));
        let zero_off = FiniteMetricSpace::from_matrix(2, vec![0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(zero_off, Err(MetricError::BadMatrix { .. })));
        let tri = FiniteMetricSpace::from_matrix(
            3,
            vec![0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0],
        );
        assert!(matches!(tri, Err(MetricError::BadMatrix { .. })));
    }

    #[test]
    fn covering_bracket_extremes() {
        let ms = line(11);
        // One ball suffices past the diameter.
        let whole = covering_number(&ms, 0, 100.0, 11.0).unwrap();
        assert_eq!(whole.upper, 1);
        assert_eq!(whole.exact, Some(1));
        // Radii below the resolution need one ball per point.
        let per_point = covering_number(&ms, 0, 100.0, 0.4).unwrap();
        assert_eq!(per_point.exact, Some(11));
        assert_eq!(per_point.upper, 11);
        assert!(per_point.lower <= 11);
        // Degenerate scales are input errors.
        assert!(covering_number(&ms, 0, 1.0, 1.0).is_err());
        assert!(covering_number(&ms, 20, 2.0, 1.0).is_err());
    }

    #[test]
    fn covering_brackets_always_nest() {
        let ms = line(30);
        for x in [0usize, 7, 15] {
            for &(big_r, r) in &[(9.0, 1.0), (20.0, 2.5), (29.0, 6.0), (4.0, 0.9)] {
                let b = covering_number(&ms, x, big_r, r).unwrap();
                assert!(b.lower <= b.upper);
                if let Some(e) = b.exact {
                    assert!(b.lower <= e && e <= b.upper);
                }
            }
        }
    }

    #[test]
    fn line_assouad_exponent_is_near_one() {
        let ms = line(513);
        let report = lower_assouad_estimate(&ms, &[(2.0, 1.0), (16.0, 1.0), (256.0, 1.0)]).unwrap();
        assert!((report.s - 1.0).abs() <= 0.1, "s = {}", report.s);
        assert!(report.c > 0.0);
        assert!(report.counts.iter().all(|&n| n >= 1));
    }

    #[test]
    fn two_point_space_declines_the_estimate() {
        let ms = line(2);
        let err = lower_assouad_estimate(&ms, &[(1.0, 0.5), (1.0, 0.05), (1.0, 0.005)]);
        assert!(matches!(err, Err(MetricError::BadScales { .. })));
    }

    #[test]
    fn up_bound_evaluates_the_formula() {
        let at3 = up_dimension_bound(3.0).unwrap();
        assert!((at3 - 2.0_f64.ln() / 7.0_f64.ln()).abs() <= 1e-12);
        assert!((at3 - 0.35621).abs() <= 1e-5);
        let near1 = up_dimension_bound(1.0001).unwrap();
        assert!((near1 - 2.0_f64.ln() / 3.0_f64.ln()).abs() <= 1e-3);
        assert!(up_dimension_bound(0.5).is_err());
    }

    #[test]
    fn constant_kappa_warp_is_an_exact_snowflake() {
        let ms = {
            let xs = cantor_points(5);
            FiniteMetricSpace::from_points_1d(&xs).unwrap()
        };
        let f = SublinearFunction::constant(1.0).unwrap();
        let out = warp_metric(&ms, &f, 0.5, 1.0).unwrap();
        assert!(out.rescaled_by.is_none());
        for i in 0..ms.len() {
            for j in 0..ms.len() {
                let want = numeric::powf(ms.at(i, j), 0.5);
                assert!((out.space.at(i, j) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn warp_rescales_large_diameters_and_rejects_zero_eps() {
        let ms = line(5);
        let f = SublinearFunction::constant(1.0).unwrap();
        let out = warp_metric(&ms, &f, 0.5, 1.0).unwrap();
        assert_eq!(out.rescaled_by, Some(4.0));
        assert!(warp_metric(&ms, &f, 0.0, 1.0).is_err());
    }

    #[test]
    fn log_kappa_warp_doubles_within_the_lipschitz_bound() {
        let f = SublinearFunction::log();
        let (eps, a) = (0.8, 2.0);
        let grid: Vec<f64> = (1..=40).map(|i| i as f64 / 100.0).collect();
        let c = warp_doubling_constant(&f, eps, a, &grid).unwrap();
        assert!(c <= numeric::powf(2.0, eps / a) + 1e-9);
        assert!(c >= 1.0);
    }

    #[test]
    fn identity_distortion_stays_below_t() {
        let ms = line(12);
        let grid = [0.25, 0.5, 1.0, 2.0];
        let profile = qs_distortion(&ms, &ms, &grid, None, 0).unwrap();
        assert!(profile.exhaustive);
        for (&t, &h) in grid.iter().zip(profile.h.iter()) {
            assert!(h <= t * (1.0 + 1e-9), "H({t}) = {h}");
        }
        // H is nondecreasing on the grid.
        for w in profile.h.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn jump_warp_exceeds_the_reference_curve() {
        // Ultrametric levels 0.1 / 0.5 / 1.0; any increasing entrywise map
        // keeps it a metric. The jump sends 0.5 to 15 while small scales
        // barely move, so no power curve from the small-scale doubling
        // constant can dominate the measured distortion.
        let levels = |d: Vec<f64>| FiniteMetricSpace::from_matrix(5, d).unwrap();
        let mut d1 = vec![0.0; 25];
        let mut d2 = vec![0.0; 25];
        let level1 = [(0usize, 1usize, 0.1), (3, 4, 0.1), (0, 2, 0.5), (1, 2, 0.5)];
        for &(i, j, v) in &level1 {
            d1[i * 5 + j] = v;
            d1[j * 5 + i] = v;
            let w = if v >= 0.3 { 30.0 * v } else { v };
            d2[i * 5 + j] = w;
            d2[j * 5 + i] = w;
        }
        for i in 0..3 {
            for j in 3..5 {
                d1[i * 5 + j] = 1.0;
                d1[j * 5 + i] = 1.0;
                d2[i * 5 + j] = 30.0;
                d2[j * 5 + i] = 30.0;
            }
        }
        let (ms1, ms2) = (levels(d1), levels(d2));
        let profile = qs_distortion(&ms1, &ms2, &[1.0, 5.0, 10.0], Some(2.0), 0).unwrap();
        assert!(profile.exceeds_eta);
        // x=0: a=2 at 0.5 maps to 15, b=1 at 0.1 maps to 0.1.
        assert!(profile.h[1] >= 150.0 - 1e-9);
    }

    #[test]
    fn mismatched_point_sets_are_rejected() {
        let err = qs_distortion(&line(5), &line(6), &[1.0], None, 0);
        assert!(matches!(err, Err(MetricError::MismatchedPoints)));
    }

    #[test]
    fn cantor_points_are_the_interval_endpoints() {
        let pts = cantor_points(2);
        let want = [0.0, 2.0 / 9.0, 2.0 / 3.0, 2.0 / 3.0 + 2.0 / 9.0];
        assert_eq!(pts.len(), 4);
        for (&p, &w) in pts.iter().zip(want.iter()) {
            assert!((p - w).abs() <= 1e-15);
        }
    }
}

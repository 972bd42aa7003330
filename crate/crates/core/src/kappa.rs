//! Sublinear scale functions and the renormalized radius calculus.
//!
//! A scale function here is an increasing, concave `kappa: [0,inf) -> [1,inf)`
//! with `kappa(t)/t -> 0`. The renormalized radius is
//! `rho(t) = integral of 1/kappa(s) ds over [0,t]`, computed by adaptive
//! Simpson quadrature to an absolute tolerance. Closed-form families are
//! admissible by construction; table-backed functions are validated on their
//! nodes at load time, so an instance of [`SublinearFunction`] can always be
//! integrated without re-checking.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::numeric::{abs, exp, fmax, fmin, ln, ln_1p, powf, sqrt};

/// Absolute quadrature tolerance used when none is configured.
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

/// Relative tolerance for the four admissibility checks. Closed-form
/// families are exact; this only absorbs float error.
pub const ADMISSIBILITY_TOL: f64 = 1e-9;

/// A final chord slope above this value fails the sublinearity check.
/// Genuinely sublinear families sampled out to moderate radii sit well
/// below it, while any asymptotically linear function sits near 1.
pub const SUBLINEARITY_SLOPE_MAX: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
pub enum KappaError {
    /// A constructor parameter is outside its documented range.
    BadParameter { what: &'static str, value: f64 },
    /// A numeric argument was NaN or infinite.
    NonFinite { what: &'static str },
    /// A numeric argument fell outside the function's domain.
    OutOfDomain { what: &'static str, value: f64 },
    /// Evaluation grid is empty, unsorted, negative, or too short.
    BadGrid { reason: &'static str },
    /// Table nodes violate the format contract.
    BadTable { reason: &'static str, index: usize },
    /// scale_comparison precondition |r1 - r2| <= A*kappa(r1) failed.
    ScaleGap { r1: f64, r2: f64, allowed: f64 },
    /// The bookkeeping constant scan found no T with kappa(T) <= T/(2A);
    /// happens only for table tails too steep for the requested A.
    BookkeepingUnbounded { a: f64 },
}

impl core::fmt::Display for KappaError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            KappaError::BadParameter { what, value } => {
                write!(f, "parameter {what} = {value} outside its valid range")
            }
            KappaError::NonFinite { what } => write!(f, "{what} must be finite"),
            KappaError::OutOfDomain { what, value } => {
                write!(f, "{what} = {value} outside the function domain")
            }
            KappaError::BadGrid { reason } => write!(f, "bad evaluation grid: {reason}"),
            KappaError::BadTable { reason, index } => {
                write!(f, "bad kappa table at node {index}: {reason}")
            }
            KappaError::ScaleGap { r1, r2, allowed } => write!(
                f,
                "|r1 - r2| = {} exceeds A*kappa(r1) = {allowed} (r1={r1}, r2={r2})",
                abs(r1 - r2)
            ),
            KappaError::BookkeepingUnbounded { a } => {
                write!(f, "no scale T with kappa(T) <= T/(2A) for A = {a}")
            }
        }
    }
}

impl core::error::Error for KappaError {}

/// Piecewise-linear interpolant of a monotone concave table.
///
/// Nodes start at t = 0 and are strictly increasing; beyond the last node
/// the final segment slope is continued, which preserves monotonicity and
/// concavity (and makes the tail asymptotically linear, see
/// [`SublinearFunction::strict_sublinearity`]).
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinear {
    ts: Vec<f64>,
    ks: Vec<f64>,
    tail_slope: f64,
}

impl PiecewiseLinear {
    fn new(nodes: &[(f64, f64)]) -> Result<Self, KappaError> {
        if nodes.len() < 2 {
            return Err(KappaError::BadTable {
                reason: "at least two nodes required",
                index: 0,
            });
        }
        for (i, &(t, k)) in nodes.iter().enumerate() {
            if !t.is_finite() || !k.is_finite() {
                return Err(KappaError::BadTable {
                    reason: "non-finite node",
                    index: i,
                });
            }
        }
        if nodes[0].0 != 0.0 {
            return Err(KappaError::BadTable {
                reason: "first node must be at t = 0",
                index: 0,
            });
        }
        let mut prev_slope = f64::INFINITY;
        for i in 1..nodes.len() {
            let dt = nodes[i].0 - nodes[i - 1].0;
            if dt <= 0.0 {
                return Err(KappaError::BadTable {
                    reason: "t column must be strictly increasing",
                    index: i,
                });
            }
            let slope = (nodes[i].1 - nodes[i - 1].1) / dt;
            if slope < -1e-12 {
                return Err(KappaError::BadTable {
                    reason: "kappa column must be nondecreasing",
                    index: i,
                });
            }
            if slope > prev_slope + 1e-12 {
                return Err(KappaError::BadTable {
                    reason: "segment slopes must be nonincreasing (concavity)",
                    index: i,
                });
            }
            prev_slope = slope;
        }
        let n = nodes.len();
        let tail_slope =
            ((nodes[n - 1].1 - nodes[n - 2].1) / (nodes[n - 1].0 - nodes[n - 2].0)).max(0.0);
        Ok(PiecewiseLinear {
            ts: nodes.iter().map(|&(t, _)| t).collect(),
            ks: nodes.iter().map(|&(_, k)| k).collect(),
            tail_slope,
        })
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.ts.len();
        if t >= self.ts[n - 1] {
            return self.ks[n - 1] + (t - self.ts[n - 1]) * self.tail_slope;
        }
        // Index of the segment containing t; partition_point finds the first
        // node strictly above t, which is >= 1 because ts[0] = 0 <= t.
        let hi = self.ts.partition_point(|&x| x <= t);
        let (t0, t1) = (self.ts[hi - 1], self.ts[hi]);
        let (k0, k1) = (self.ks[hi - 1], self.ks[hi]);
        k0 + (t - t0) * (k1 - k0) / (t1 - t0)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Shape {
    Constant { c: f64 },
    Log,
    Power { p: f64 },
    PowerOverLog,
    Table(PiecewiseLinear),
}

/// An admissible sublinear scale function.
///
/// Construction validates parameters, so every live value satisfies the
/// admissibility invariants up to float error; [`Self::verify_admissible`]
/// re-checks them on a caller-supplied grid and reports violations.
#[derive(Clone, Debug, PartialEq)]
pub struct SublinearFunction {
    shape: Shape,
    floor: f64,
    quad_tol: f64,
}

impl SublinearFunction {
    /// kappa(t) = c for a constant c >= 1.
    pub fn constant(c: f64) -> Result<Self, KappaError> {
        if !c.is_finite() {
            return Err(KappaError::NonFinite { what: "c" });
        }
        if c < 1.0 {
            return Err(KappaError::BadParameter { what: "c", value: c });
        }
        Ok(Self::from_shape(Shape::Constant { c }))
    }

    /// kappa(t) = 1 + ln(1 + t).
    pub fn log() -> Self {
        Self::from_shape(Shape::Log)
    }

    /// kappa(t) = (1 + t)^p for p in [0, 1).
    pub fn power(p: f64) -> Result<Self, KappaError> {
        if !p.is_finite() {
            return Err(KappaError::NonFinite { what: "p" });
        }
        if !(0.0..1.0).contains(&p) {
            return Err(KappaError::BadParameter { what: "p", value: p });
        }
        Ok(Self::from_shape(Shape::Power { p }))
    }

    /// kappa(t) = 1 + t/(1 + ln(1 + t)); sublinear but slower than every
    /// power law, so it fails the strict-sublinearity bound.
    pub fn power_over_log() -> Self {
        Self::from_shape(Shape::PowerOverLog)
    }

    /// Piecewise-linear kappa through the given (t, kappa) nodes.
    pub fn from_table(nodes: &[(f64, f64)]) -> Result<Self, KappaError> {
        let table = PiecewiseLinear::new(nodes)?;
        if table.ks[0] < 1.0 {
            return Err(KappaError::BadTable {
                reason: "kappa(0) must be >= 1",
                index: 0,
            });
        }
        Ok(Self::from_shape(Shape::Table(table)))
    }

    fn from_shape(shape: Shape) -> Self {
        SublinearFunction {
            shape,
            floor: 1.0,
            quad_tol: DEFAULT_QUAD_TOL,
        }
    }

    /// Records a floor in [1, kappa(0)]. Because kappa is nondecreasing the
    /// floor never needs to clamp; a floor above kappa(0) would clamp near 0
    /// and break concavity, so it is rejected.
    pub fn with_floor(mut self, floor: f64) -> Result<Self, KappaError> {
        if !floor.is_finite() {
            return Err(KappaError::NonFinite { what: "floor" });
        }
        if floor < 1.0 || floor > self.eval(0.0) + 1e-12 {
            return Err(KappaError::BadParameter {
                what: "floor",
                value: floor,
            });
        }
        self.floor = floor;
        Ok(self)
    }

    /// Sets the absolute quadrature tolerance for rho and its inverse.
    pub fn with_quad_tol(mut self, tol: f64) -> Result<Self, KappaError> {
        if !tol.is_finite() || !(1e-14..=1e-1).contains(&tol) {
            return Err(KappaError::BadParameter {
                what: "quad_tol",
                value: tol,
            });
        }
        self.quad_tol = tol;
        Ok(self)
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    pub fn family_name(&self) -> &'static str {
        match &self.shape {
            Shape::Constant { .. } => "constant",
            Shape::Log => "log",
            Shape::Power { .. } => "power",
            Shape::PowerOverLog => "power_over_log",
            Shape::Table(_) => "table",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match &self.shape {
            Shape::Constant { c } => alloc::vec![*c],
            Shape::Power { p } => alloc::vec![*p],
            _ => Vec::new(),
        }
    }

    /// Evaluates kappa. Negative arguments are clamped to 0 so callers can
    /// pass raw differences without pre-clamping.
    pub fn eval(&self, t: f64) -> f64 {
        let t = fmax(t, 0.0);
        match &self.shape {
            Shape::Constant { c } => *c,
            Shape::Log => 1.0 + ln_1p(t),
            Shape::Power { p } => powf(1.0 + t, *p),
            Shape::PowerOverLog => 1.0 + t / (1.0 + ln_1p(t)),
            Shape::Table(table) => table.eval(t),
        }
    }

    /// Interior breakpoints of 1/kappa on (a, b); quadrature splits there.
    fn breakpoints(&self, a: f64, b: f64, out: &mut Vec<f64>) {
        if let Shape::Table(table) = &self.shape {
            for &t in &table.ts {
                if t > a && t < b {
                    out.push(t);
                }
            }
        }
    }

    /// Four-way admissibility check on a grid: floor, monotonicity, midpoint
    /// concavity, and sublinearity (nonincreasing kappa(t)/t past t = 1 plus
    /// a final chord slope below [`SUBLINEARITY_SLOPE_MAX`]).
    pub fn verify_admissible(&self, grid: &[f64]) -> Result<AdmissibilityReport, KappaError> {
        validate_grid(grid)?;
        let vals: Vec<f64> = grid.iter().map(|&t| self.eval(t)).collect();

        let mut floor_viol: f64 = 0.0;
        for &k in &vals {
            floor_viol = fmax(floor_viol, (self.floor - k) / fmax(1.0, self.floor));
        }

        let mut mono_viol: f64 = 0.0;
        for i in 1..grid.len() {
            mono_viol = fmax(mono_viol, (vals[i - 1] - vals[i]) / fmax(1.0, vals[i - 1]));
        }

        // All pairs on small grids, a deterministic stride sample on large
        // ones; consecutive pairs are always included.
        let mut conc_viol: f64 = 0.0;
        let n = grid.len();
        let check_pair = |i: usize, j: usize, conc_viol: &mut f64| {
            let mid = self.eval(0.5 * (grid[i] + grid[j]));
            let chord = 0.5 * (vals[i] + vals[j]);
            *conc_viol = fmax(*conc_viol, (chord - mid) / fmax(1.0, mid));
        };
        if n <= 400 {
            for i in 0..n {
                for j in (i + 1)..n {
                    check_pair(i, j, &mut conc_viol);
                }
            }
        } else {
            let stride = n / 200 + 1;
            for i in (0..n).step_by(stride) {
                for j in ((i + 1)..n).step_by(stride) {
                    check_pair(i, j, &mut conc_viol);
                }
            }
            for i in 1..n {
                check_pair(i - 1, i, &mut conc_viol);
            }
        }

        let mut sublin_viol: f64 = 0.0;
        let mut prev_ratio = f64::INFINITY;
        for (i, &t) in grid.iter().enumerate() {
            if t >= 1.0 {
                let ratio = vals[i] / t;
                sublin_viol = fmax(sublin_viol, (ratio - prev_ratio) / fmax(1.0, prev_ratio));
                prev_ratio = ratio;
            }
        }
        let chord = (vals[n - 1] - vals[n - 2]) / (grid[n - 1] - grid[n - 2]);
        sublin_viol = fmax(sublin_viol, chord - SUBLINEARITY_SLOPE_MAX);

        let checks = [
            AdmissibilityCheck {
                name: "floor",
                violation: floor_viol,
            },
            AdmissibilityCheck {
                name: "monotone",
                violation: mono_viol,
            },
            AdmissibilityCheck {
                name: "concave",
                violation: conc_viol,
            },
            AdmissibilityCheck {
                name: "sublinear",
                violation: sublin_viol,
            },
        ];
        let passes = checks.iter().all(|c| c.violation <= ADMISSIBILITY_TOL);
        Ok(AdmissibilityReport {
            checks,
            tol: ADMISSIBILITY_TOL,
            grid_len: n,
            passes,
        })
    }

    /// Whether kappa(t) <= C0 * t^(1-delta) holds for t >= 1 with some
    /// delta > 0. Exact for closed forms; table tails are linear, so only a
    /// flat tail passes.
    pub fn strict_sublinearity(&self) -> StrictSublinearity {
        match &self.shape {
            Shape::Constant { c } => StrictSublinearity::Holds {
                c0: *c,
                delta: 1.0,
            },
            Shape::Log => {
                // sup over t >= 1 of (1 + ln(1+t)) / sqrt(t), located by scan;
                // the ratio is unimodal with max near t ~ 1.2.
                let mut c0: f64 = 0.0;
                let mut t = 1.0;
                while t <= 1e3 {
                    c0 = fmax(c0, self.eval(t) / sqrt(t));
                    t *= 1.01;
                }
                StrictSublinearity::Holds {
                    c0: c0 * (1.0 + 1e-9),
                    delta: 0.5,
                }
            }
            Shape::Power { p } => StrictSublinearity::Holds {
                c0: powf(2.0, *p),
                delta: 1.0 - p,
            },
            Shape::PowerOverLog => StrictSublinearity::Fails {
                reason: "t/log t eventually exceeds every C0*t^(1-delta)",
            },
            Shape::Table(table) => {
                if table.tail_slope == 0.0 {
                    StrictSublinearity::Holds {
                        c0: *table.ks.last().unwrap(),
                        delta: 1.0,
                    }
                } else {
                    StrictSublinearity::Fails {
                        reason: "piecewise-linear tail is asymptotically linear",
                    }
                }
            }
        }
    }

    /// rho(t): adaptive Simpson quadrature of 1/kappa over [0, t] to the
    /// configured absolute tolerance.
    pub fn rho(&self, t: f64) -> Result<RhoValue, KappaError> {
        if !t.is_finite() {
            return Err(KappaError::NonFinite { what: "t" });
        }
        if t < 0.0 {
            return Err(KappaError::OutOfDomain { what: "t", value: t });
        }
        let value = self.integrate(0.0, t, self.quad_tol);
        Ok(RhoValue {
            t,
            value,
            quad_tol: self.quad_tol,
        })
    }

    /// Inverts rho by doubling to bracket y, then bisecting. The result
    /// satisfies |rho(t) - y| <= quad_tol plus the bisection width.
    pub fn rho_inverse(&self, y: f64) -> Result<f64, KappaError> {
        if !y.is_finite() {
            return Err(KappaError::NonFinite { what: "y" });
        }
        if y < 0.0 {
            return Err(KappaError::OutOfDomain { what: "y", value: y });
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let mut cache = RhoCache::new(self);
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        let mut guard = 0;
        while cache.rho(hi) < y {
            lo = hi;
            hi *= 2.0;
            guard += 1;
            if guard > 1100 {
                return Err(KappaError::OutOfDomain { what: "y", value: y });
            }
        }
        for _ in 0..200 {
            if hi - lo <= 1e-13 * fmax(1.0, hi) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if cache.rho(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// rho(R + A*kappa(R)) - rho(R), computed as one integral so the
    /// quadrature error enters once. Bounded by A + 2*quad_tol for every
    /// admissible kappa (the integrand on the gap is at most 1/kappa(R)).
    pub fn bounded_error_gap(&self, r: f64, a: f64) -> Result<f64, KappaError> {
        if !r.is_finite() || !a.is_finite() {
            return Err(KappaError::NonFinite { what: "r or a" });
        }
        if r < 0.0 {
            return Err(KappaError::OutOfDomain { what: "r", value: r });
        }
        if a < 0.0 {
            return Err(KappaError::OutOfDomain { what: "a", value: a });
        }
        let upper = r + a * self.eval(r);
        Ok(self.integrate(r, upper, self.quad_tol))
    }

    /// Compares the scale at two radii within an A*kappa step of each other:
    /// returns kappa(r2)/kappa(r1), |rho(r2) - rho(r1)|, and the bookkeeping
    /// constant C(A) that bounds both (ratio in [1/C, C], gap <= C).
    pub fn scale_comparison(
        &self,
        r1: f64,
        r2: f64,
        a: f64,
    ) -> Result<ScaleComparison, KappaError> {
        for (what, v) in [("r1", r1), ("r2", r2), ("a", a)] {
            if !v.is_finite() {
                return Err(KappaError::NonFinite { what });
            }
            if v < 0.0 {
                return Err(KappaError::OutOfDomain { what, value: v });
            }
        }
        let allowed = a * self.eval(r1);
        if abs(r1 - r2) > allowed + 1e-12 {
            return Err(KappaError::ScaleGap { r1, r2, allowed });
        }
        let ratio = self.eval(r2) / self.eval(r1);
        let (lo, hi) = (fmin(r1, r2), fmax(r1, r2));
        let rho_gap = self.integrate(lo, hi, self.quad_tol);
        let bound = self.bookkeeping_constant(a)?;
        Ok(ScaleComparison {
            kappa_ratio: ratio,
            rho_gap,
            bound,
        })
    }

    /// C(A) per the bookkeeping recipe: find the scale T past which
    /// kappa(t) <= t/(2A) (so radii within A*kappa of each other have scale
    /// ratio at most 2 and rho gap at most 2A), and absorb the initial
    /// segment [0, T + A*kappa(T)] into the constant.
    pub fn bookkeeping_constant(&self, a: f64) -> Result<f64, KappaError> {
        if !a.is_finite() || a < 0.0 {
            return Err(KappaError::BadParameter { what: "a", value: a });
        }
        if a == 0.0 {
            return Ok(fmax(2.0, self.eval(0.0)));
        }
        let crossed = |t: f64| self.eval(t) <= t / (2.0 * a);
        let mut hi = 1.0_f64;
        let mut guard = 0;
        while !crossed(hi) {
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return Err(KappaError::BookkeepingUnbounded { a });
            }
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if crossed(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let t_star = hi;
        let reach = t_star + a * self.eval(t_star);
        let rho_reach = self.integrate(0.0, reach, self.quad_tol);
        Ok([2.0, 2.0 * a, self.eval(reach), rho_reach]
            .into_iter()
            .fold(f64::MIN, fmax))
    }

    /// Integral of 1/kappa over [a, b] (a <= b), split at table breakpoints.
    fn integrate(&self, a: f64, b: f64, tol: f64) -> f64 {
        debug_assert!(a <= b);
        if a >= b {
            return 0.0;
        }
        let mut cuts = alloc::vec![a];
        self.breakpoints(a, b, &mut cuts);
        cuts.push(b);
        let total = b - a;
        let mut sum = 0.0;
        for w in cuts.windows(2) {
            let piece_tol = fmax(tol * (w[1] - w[0]) / total, 1e-300);
            sum += self.adaptive_simpson(w[0], w[1], piece_tol);
        }
        sum
    }

    fn adaptive_simpson(&self, a: f64, b: f64, tol: f64) -> f64 {
        let g = |s: f64| 1.0 / self.eval(s);
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (g(a), g(m), g(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        self.simpson_step(&g, a, fa, b, fb, m, fm, whole, tol, 48)
    }

    #[allow(clippy::too_many_arguments)]
    fn simpson_step(
        &self,
        g: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let (flm, frm) = (g(lm), g(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || abs(delta) <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        let half = 0.5 * tol;
        self.simpson_step(g, a, fa, m, fm, lm, flm, left, half, depth - 1)
            + self.simpson_step(g, m, fm, b, fb, rm, frm, right, half, depth - 1)
    }

    /// Human-readable description for config echo and reports.
    pub fn describe(&self) -> String {
        match &self.shape {
            Shape::Constant { c } => format!("constant c={c}"),
            Shape::Log => String::from("1+log(1+t)"),
            Shape::Power { p } => format!("(1+t)^{p}"),
            Shape::PowerOverLog => String::from("1+t/(1+log(1+t))"),
            Shape::Table(t) => format!("table with {} nodes", t.ts.len()),
        }
    }
}

/// Result of [`SublinearFunction::scale_comparison`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleComparison {
    pub kappa_ratio: f64,
    pub rho_gap: f64,
    /// Bookkeeping constant C(A); kappa_ratio lies in [1/C, C] and
    /// rho_gap <= C.
    pub bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmissibilityCheck {
    pub name: &'static str,
    /// Relative violation; 0 means the inequality held everywhere.
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityReport {
    pub checks: [AdmissibilityCheck; 4],
    pub tol: f64,
    pub grid_len: usize,
    pub passes: bool,
}

impl AdmissibilityReport {
    pub fn max_violation(&self) -> f64 {
        self.checks.iter().fold(0.0, |m, c| fmax(m, c.violation))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StrictSublinearity {
    /// kappa(t) <= c0 * t^(1-delta) for all t >= 1.
    Holds { c0: f64, delta: f64 },
    Fails { reason: &'static str },
}

/// One evaluated point of the renormalized radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhoValue {
    pub t: f64,
    pub value: f64,
    pub quad_tol: f64,
}

/// Incremental evaluator for rho at many increasing (or clustered) radii.
///
/// Keeps sorted anchors (t, rho(t)) and integrates from the nearest anchor
/// below each query, so a sweep over integer radii costs one short panel per
/// step. Each chained integration contributes at most quad_tol of error;
/// callers needing the single-integration bound use [`SublinearFunction::rho`].
/// Not shareable across threads; build one per worker.
pub struct RhoCache<'a> {
    f: &'a SublinearFunction,
    anchors: Vec<(f64, f64)>,
}

impl<'a> RhoCache<'a> {
    pub fn new(f: &'a SublinearFunction) -> Self {
        RhoCache {
            f,
            anchors: alloc::vec![(0.0, 0.0)],
        }
    }

    pub fn rho(&mut self, t: f64) -> f64 {
        debug_assert!(t.is_finite() && t >= 0.0);
        let idx = self.anchors.partition_point(|&(at, _)| at <= t);
        let (at, aval) = self.anchors[idx - 1];
        if at == t {
            return aval;
        }
        let value = aval + self.f.integrate(at, t, self.f.quad_tol);
        self.anchors.insert(idx, (t, value));
        value
    }
}

/// {0} followed by a geometric progression from t_min to t_max.
pub fn geometric_grid(t_min: f64, t_max: f64, n: usize) -> Vec<f64> {
    debug_assert!(t_min > 0.0 && t_max > t_min && n >= 2);
    let mut grid = Vec::with_capacity(n + 1);
    grid.push(0.0);
    let log_lo = ln(t_min);
    let log_hi = ln(t_max);
    for i in 0..n - 1 {
        let frac = i as f64 / (n - 1) as f64;
        grid.push(exp(log_lo + frac * (log_hi - log_lo)));
    }
    grid.push(t_max);
    grid.dedup();
    grid
}

/// Default admissibility grid: 0 then geometric 1e-3..1e6.
pub fn default_admissibility_grid() -> Vec<f64> {
    geometric_grid(1e-3, 1e6, 256)
}

fn validate_grid(grid: &[f64]) -> Result<(), KappaError> {
    if grid.is_empty() {
        return Err(KappaError::BadGrid {
            reason: "empty grid",
        });
    }
    if grid.len() < 3 {
        return Err(KappaError::BadGrid {
            reason: "need at least 3 points",
        });
    }
    let mut prev = -1.0;
    for &t in grid {
        if !t.is_finite() {
            return Err(KappaError::BadGrid {
                reason: "non-finite entry",
            });
        }
        if t < 0.0 {
            return Err(KappaError::BadGrid {
                reason: "negative entry",
            });
        }
        if t <= prev {
            return Err(KappaError::BadGrid {
                reason: "not strictly increasing",
            });
        }
        prev = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_0_100() -> Vec<f64> {
        (0..=100).map(|i| i as f64).collect()
    }

    #[test]
    fn constant_family_passes_with_zero_violations() {
        let f = SublinearFunction::constant(1.0).unwrap();
        let report = f.verify_admissible(&grid_0_100()).unwrap();
        assert!(report.passes);
        assert_eq!(report.max_violation(), 0.0);
    }

    #[test]
    fn log_family_passes_on_geometric_grid() {
        let f = SublinearFunction::log();
        let grid = geometric_grid(1e-3, 1e6, 300);
        assert!(f.verify_admissible(&grid).unwrap().passes);
    }

    #[test]
    fn linear_table_fails_sublinearity() {
        // kappa(t) = 1 + t as a two-node table with linear tail.
        let f = SublinearFunction::from_table(&[(0.0, 1.0), (100.0, 101.0)]).unwrap();
        let report = f.verify_admissible(&grid_0_100()).unwrap();
        assert!(!report.passes);
        let sublin = &report.checks[3];
        assert_eq!(sublin.name, "sublinear");
        assert!(sublin.violation > ADMISSIBILITY_TOL);
        // The other three checks hold for a linear function.
        for c in &report.checks[..3] {
            assert!(c.violation <= ADMISSIBILITY_TOL, "{}: {}", c.name, c.violation);
        }
    }

    #[test]
    fn empty_grid_is_an_input_error() {
        let f = SublinearFunction::log();
        assert!(matches!(
            f.verify_admissible(&[]),
            Err(KappaError::BadGrid { .. })
        ));
    }

    #[test]
    fn rho_of_constant_one_is_identity() {
        let f = SublinearFunction::constant(1.0).unwrap();
        let v = f.rho(7.0).unwrap();
        assert!((v.value - 7.0).abs() <= v.quad_tol);
    }

    #[test]
    fn rho_rejects_negative_radius() {
        let f = SublinearFunction::log();
        assert!(matches!(
            f.rho(-1.0),
            Err(KappaError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn rho_inverse_of_constant_one() {
        let f = SublinearFunction::constant(1.0).unwrap();
        assert!((f.rho_inverse(5.0).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn rho_inverse_zero_is_zero() {
        let f = SublinearFunction::log();
        assert_eq!(f.rho_inverse(0.0).unwrap(), 0.0);
    }

    #[test]
    fn bounded_error_gap_constant_kappa_is_exact() {
        let f = SublinearFunction::constant(1.0).unwrap();
        let gap = f.bounded_error_gap(10.0, 3.0).unwrap();
        assert!((gap - 3.0).abs() <= 2.0 * f.quad_tol());
    }

    #[test]
    fn bounded_error_gap_zero_a_is_zero() {
        let f = SublinearFunction::log();
        assert_eq!(f.bounded_error_gap(50.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn scale_comparison_equal_radii() {
        let f = SublinearFunction::log();
        let sc = f.scale_comparison(100.0, 100.0, 2.0).unwrap();
        assert_eq!(sc.kappa_ratio, 1.0);
        assert_eq!(sc.rho_gap, 0.0);
        assert!(sc.bound >= 2.0);
    }

    #[test]
    fn scale_comparison_rejects_wide_gap() {
        let f = SublinearFunction::constant(1.0).unwrap();
        assert!(matches!(
            f.scale_comparison(10.0, 20.0, 1.0),
            Err(KappaError::ScaleGap { .. })
        ));
    }

    #[test]
    fn power_parameter_range_enforced() {
        assert!(SublinearFunction::power(1.0).is_err());
        assert!(SublinearFunction::power(-0.1).is_err());
        assert!(SublinearFunction::power(0.999).is_ok());
    }

    #[test]
    fn constant_below_one_rejected() {
        assert!(SublinearFunction::constant(0.5).is_err());
    }

    #[test]
    fn floor_above_kappa_zero_rejected() {
        let f = SublinearFunction::log();
        assert!(f.clone().with_floor(1.5).is_err());
        assert!(f.with_floor(1.0).is_ok());
    }

    #[test]
    fn table_validation_catches_format_errors() {
        // Not starting at zero.
        assert!(SublinearFunction::from_table(&[(1.0, 1.0), (2.0, 1.5)]).is_err());
        // Non-increasing t.
        assert!(SublinearFunction::from_table(&[(0.0, 1.0), (0.0, 2.0)]).is_err());
        // Decreasing kappa.
        assert!(SublinearFunction::from_table(&[(0.0, 2.0), (1.0, 1.5)]).is_err());
        // Convex corner (slopes increase).
        assert!(
            SublinearFunction::from_table(&[(0.0, 1.0), (1.0, 1.1), (2.0, 2.0)]).is_err()
        );
        // Below the unit floor.
        assert!(SublinearFunction::from_table(&[(0.0, 0.5), (1.0, 0.9)]).is_err());
    }

    #[test]
    fn table_interpolates_and_extends() {
        let f = SublinearFunction::from_table(&[(0.0, 1.0), (2.0, 3.0), (4.0, 4.0)]).unwrap();
        assert_eq!(f.eval(1.0), 2.0);
        assert_eq!(f.eval(4.0), 4.0);
        // Tail continues the last slope 1/2.
        assert_eq!(f.eval(6.0), 5.0);
    }

    #[test]
    fn strict_sublinearity_classification() {
        assert!(matches!(
            SublinearFunction::constant(3.0).unwrap().strict_sublinearity(),
            StrictSublinearity::Holds { delta, .. } if delta == 1.0
        ));
        assert!(matches!(
            SublinearFunction::log().strict_sublinearity(),
            StrictSublinearity::Holds { delta, .. } if delta == 0.5
        ));
        assert!(matches!(
            SublinearFunction::power_over_log().strict_sublinearity(),
            StrictSublinearity::Fails { .. }
        ));
        let table = SublinearFunction::from_table(&[(0.0, 1.0), (1.0, 2.0)]).unwrap();
        assert!(matches!(
            table.strict_sublinearity(),
            StrictSublinearity::Fails { .. }
        ));
        let flat = SublinearFunction::from_table(&[(0.0, 2.0), (1.0, 2.0)]).unwrap();
        assert!(matches!(
            flat.strict_sublinearity(),
            StrictSublinearity::Holds { .. }
        ));
    }

    #[test]
    fn log_strict_bound_actually_holds() {
        let f = SublinearFunction::log();
        if let StrictSublinearity::Holds { c0, delta } = f.strict_sublinearity() {
            let mut t = 1.0;
            while t < 1e9 {
                assert!(f.eval(t) <= c0 * powf(t, 1.0 - delta) * (1.0 + 1e-9));
                t *= 1.7;
            }
        } else {
            panic!("log family must be strictly sublinear");
        }
    }

    #[test]
    fn rho_cache_matches_direct_evaluation() {
        let f = SublinearFunction::log();
        let mut cache = RhoCache::new(&f);
        for t in [1.0, 5.0, 2.0, 100.0, 50.0, 1000.0] {
            let direct = f.rho(t).unwrap().value;
            let cached = cache.rho(t);
            assert!(
                (direct - cached).abs() < 1e-8,
                "t={t}: direct {direct} vs cached {cached}"
            );
        }
    }

    #[test]
    fn bookkeeping_constant_covers_log_example() {
        let f = SublinearFunction::log();
        let sc = f
            .scale_comparison(1e4, 1e4 + 3.0 * f.eval(1e4), 3.0)
            .unwrap();
        assert!(sc.kappa_ratio <= 2.0);
        assert!(sc.rho_gap <= 3.0 + 1e-9);
        assert!(sc.kappa_ratio <= sc.bound && 1.0 / sc.bound <= sc.kappa_ratio);
        assert!(sc.rho_gap <= sc.bound);
    }
}

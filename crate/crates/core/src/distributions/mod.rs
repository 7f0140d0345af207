//! One-dimensional value distributions with atoms.
//!
//! A [`Distribution`] is an ordered list of non-overlapping pieces: atoms and
//! segments carrying a closed-form density. Every query (CDF, quantile,
//! partial expectations, truncation, maxima) is answered exactly from the
//! closed forms; nothing here integrates numerically.
//!
//! Threshold convention: `V <= x` and `V >= x` both include an atom at `x`.
//! The `_strict` variants exclude it.

mod exp_poly;
mod literal;

pub use literal::DistributionLiteral;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use exp_poly::{ExpPoly, Term};

/// Largest tolerated deviation of the total mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Cumulative levels this close to a CDF plateau are treated as on it.
const PLATEAU_SNAP: f64 = 64.0 * f64::EPSILON;

/// Tolerance on user-supplied weights before they are renormalized.
const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Density family of a segment, up to normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Shape {
    Uniform,
    /// Proportional to `exp(-rate * x)`; a negative rate gives an increasing density.
    Exponential {
        rate: f64,
    },
    /// Proportional to `sum_i coefficients[i] * x^i`.
    Polynomial {
        coefficients: Vec<f64>,
    },
}

fn uniform_shape() -> Shape {
    Shape::Uniform
}

/// Building block accepted by [`Distribution::from_components`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Component {
    Segment {
        lo: f64,
        hi: f64,
        weight: f64,
        #[serde(default = "uniform_shape")]
        shape: Shape,
    },
    Atom {
        at: f64,
        mass: f64,
    },
}

impl Component {
    /// Uniform segment carrying `weight` of the mass.
    pub fn segment(lo: f64, hi: f64, weight: f64) -> Self {
        Component::Segment {
            lo,
            hi,
            weight,
            shape: Shape::Uniform,
        }
    }

    pub fn atom(at: f64, mass: f64) -> Self {
        Component::Atom { at, mass }
    }
}

#[derive(Debug, Clone)]
struct Segment {
    lo: f64,
    len: f64,
    /// In the local coordinate `y = x - lo`.
    density: ExpPoly,
    anti: ExpPoly,
    moment_anti: ExpPoly,
    anti_lo: f64,
    anti_hi: f64,
    moment_lo: f64,
    moment_hi: f64,
    mass: f64,
    moment: f64,
}

fn eval_or_limit(p: &ExpPoly, y: f64) -> f64 {
    if y.is_infinite() {
        p.limit_at_infinity().unwrap_or(f64::INFINITY)
    } else {
        p.eval(y)
    }
}

impl Segment {
    fn new(lo: f64, len: f64, density: ExpPoly) -> Result<Self> {
        if !lo.is_finite() || lo < 0.0 {
            return Err(invalid(
                "lo",
                format!("segment start {lo} must be finite and >= 0"),
            ));
        }
        if !(len > 0.0) {
            return Err(invalid(
                "hi",
                format!("segment at {lo} has non-positive length {len}"),
            ));
        }
        let density = density.conditioned(len);
        if len.is_infinite() && !density.decays() {
            return Err(invalid("density", "must decay on an unbounded segment"));
        }
        check_nonnegative(lo, len, &density)?;
        let anti = density.antiderivative();
        let moment_anti = density.mul_y().antiderivative();
        let anti_lo = anti.eval(0.0);
        let anti_hi = eval_or_limit(&anti, len);
        let moment_lo = moment_anti.eval(0.0);
        let moment_hi = eval_or_limit(&moment_anti, len);
        let mass = anti_hi - anti_lo;
        let moment = lo * mass + (moment_hi - moment_lo);
        Ok(Self {
            lo,
            len,
            density,
            anti,
            moment_anti,
            anti_lo,
            anti_hi,
            moment_lo,
            moment_hi,
            mass,
            moment,
        })
    }

    fn hi(&self) -> f64 {
        self.lo + self.len
    }

    fn local(&self, x: f64) -> f64 {
        (x - self.lo).clamp(0.0, self.len)
    }

    fn mass_below(&self, x: f64) -> f64 {
        let y = self.local(x);
        if y >= self.len {
            self.mass
        } else {
            self.anti.eval(y) - self.anti_lo
        }
    }

    fn mass_above(&self, x: f64) -> f64 {
        let y = self.local(x);
        if y <= 0.0 {
            self.mass
        } else if y >= self.len {
            0.0
        } else {
            self.anti_hi - self.anti.eval(y)
        }
    }

    fn moment_below(&self, x: f64) -> f64 {
        let y = self.local(x);
        if y >= self.len {
            self.moment
        } else {
            self.lo * self.mass_below(x) + (self.moment_anti.eval(y) - self.moment_lo)
        }
    }

    fn moment_above(&self, x: f64) -> f64 {
        let y = self.local(x);
        if y <= 0.0 {
            self.moment
        } else if y >= self.len {
            0.0
        } else {
            self.lo * self.mass_above(x) + (self.moment_hi - self.moment_anti.eval(y))
        }
    }

    fn split(&self, at: f64) -> Result<(Segment, Segment)> {
        let d = at - self.lo;
        let left = Segment::new(self.lo, d, self.density.clone())?;
        let right = Segment::new(at, self.len - d, self.density.shift(d))?;
        Ok((left, right))
    }

    /// CDF contribution of this segment as a function of `y = x - origin`,
    /// valid while `x` stays inside the segment.
    fn local_cdf_poly(&self, origin: f64, base: f64) -> ExpPoly {
        self.anti
            .shift(origin - self.lo)
            .add_constant(base - self.anti_lo)
    }

    /// Smallest `x` in the segment with `mass_below(x) >= target`.
    fn solve_mass(&self, target: f64) -> f64 {
        if target <= 0.0 {
            return self.lo;
        }
        if target >= self.mass {
            return self.hi();
        }
        let closed = match self.density.terms() {
            [Term {
                coef,
                power: 0,
                rate,
            }] if *rate == 0.0 => Some(target / coef),
            [Term {
                coef,
                power: 0,
                rate,
            }] => {
                let arg = rate * target / coef;
                (arg > -1.0).then(|| arg.ln_1p() / rate)
            }
            _ => None,
        };
        if let Some(y) = closed {
            return self.lo + y.clamp(0.0, self.len);
        }
        let below = |y: f64| self.anti.eval(y) - self.anti_lo;
        let mut a = 0.0;
        let mut b = if self.len.is_finite() {
            self.len
        } else {
            let mut b = 1.0;
            while below(b) < target && b < 1e300 {
                b *= 2.0;
            }
            b
        };
        for _ in 0..2000 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if below(mid) >= target {
                b = mid;
            } else {
                a = mid;
            }
        }
        self.lo + b
    }
}

fn check_nonnegative(lo: f64, len: f64, density: &ExpPoly) -> Result<()> {
    let samples: Vec<f64> = if len.is_finite() {
        (0..=64).map(|i| len * f64::from(i) / 64.0).collect()
    } else {
        std::iter::once(0.0)
            .chain((0..40).map(|i| 2f64.powi(i - 8)))
            .collect()
    };
    let values: Vec<f64> = samples.iter().map(|&y| density.eval(y)).collect();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (y, v) in samples.iter().zip(&values) {
        if *v < -1e-12 * (1.0 + scale) || v.is_nan() {
            return Err(Error::NegativeDensity { at: lo + y });
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum Piece {
    Atom { at: f64, mass: f64 },
    Segment(Segment),
}

impl Piece {
    fn start(&self) -> f64 {
        match self {
            Piece::Atom { at, .. } => *at,
            Piece::Segment(s) => s.lo,
        }
    }

    fn end(&self) -> f64 {
        match self {
            Piece::Atom { at, .. } => *at,
            Piece::Segment(s) => s.hi(),
        }
    }

    fn mass(&self) -> f64 {
        match self {
            Piece::Atom { mass, .. } => *mass,
            Piece::Segment(s) => s.mass,
        }
    }

    fn moment(&self) -> f64 {
        match self {
            Piece::Atom { at, mass } => at * mass,
            Piece::Segment(s) => s.moment,
        }
    }
}

/// An immutable distribution of a non-negative value.
#[derive(Debug, Clone)]
pub struct Distribution {
    pieces: Vec<Piece>,
    mass_before: Vec<f64>,
    mass_from: Vec<f64>,
    moment_before: Vec<f64>,
    moment_from: Vec<f64>,
}

impl Distribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::from_components(&[Component::Segment {
            lo,
            hi,
            weight: 1.0,
            shape: Shape::Uniform,
        }])
    }

    /// Exponential with the given rate on `[0, inf)`.
    pub fn exponential(rate: f64) -> Result<Self> {
        Self::exponential_on(rate, 0.0, f64::INFINITY)
    }

    /// Exponential density `~ exp(-rate x)` restricted to `[lo, hi]`.
    pub fn exponential_on(rate: f64, lo: f64, hi: f64) -> Result<Self> {
        Self::from_components(&[Component::Segment {
            lo,
            hi,
            weight: 1.0,
            shape: Shape::Exponential { rate },
        }])
    }

    pub fn point_mass(at: f64) -> Result<Self> {
        Self::discrete(&[(at, 1.0)])
    }

    /// Finitely many atoms given as `(value, probability)`.
    pub fn discrete(points: &[(f64, f64)]) -> Result<Self> {
        let comps: Vec<Component> = points
            .iter()
            .map(|&(at, mass)| Component::Atom { at, mass })
            .collect();
        Self::from_components(&comps)
    }

    /// Uniform over the given values (repeats add mass).
    pub fn uniform_over(values: &[f64]) -> Result<Self> {
        let p = 1.0 / values.len() as f64;
        let points: Vec<(f64, f64)> = values.iter().map(|&v| (v, p)).collect();
        Self::discrete(&points)
    }

    /// Seller of the exponential gain-from-trade family: density
    /// `lambda * e^(x - t)` on `[0, t]` with `lambda = 1 / (1 - e^-t)`.
    pub fn gft_seller(t: f64) -> Result<Self> {
        check_gft_t(t)?;
        Self::exponential_on(-1.0, 0.0, t)
    }

    /// Buyer of the exponential gain-from-trade family: density
    /// `lambda * e^-x` on `[0, t]`.
    pub fn gft_buyer(t: f64) -> Result<Self> {
        check_gft_t(t)?;
        Self::exponential_on(1.0, 0.0, t)
    }

    /// Builds a mixture from weighted segments and atoms. Weights must sum
    /// to one up to `1e-9` and are renormalized exactly.
    pub fn from_components(components: &[Component]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Empty {
                what: "component list",
            });
        }
        let mut total = 0.0;
        for c in components {
            let w = match c {
                Component::Segment { weight, .. } => *weight,
                Component::Atom { mass, .. } => *mass,
            };
            if !w.is_finite() || w < 0.0 {
                return Err(invalid("weight", format!("{w} is not a probability")));
            }
            total += w;
        }
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::NotNormalized { total });
        }
        let mut atoms = Vec::new();
        let mut segments = Vec::new();
        for c in components {
            match c {
                Component::Atom { at, mass } => atoms.push((*at, mass / total)),
                Component::Segment {
                    lo,
                    hi,
                    weight,
                    shape,
                } => {
                    if *weight == 0.0 {
                        continue;
                    }
                    if !(hi > lo) || lo.is_nan() {
                        return Err(invalid("hi", format!("segment [{lo}, {hi}] is empty")));
                    }
                    let len = hi - lo;
                    let raw = shape_density(*lo, len, shape)?;
                    let unit = Segment::new(*lo, len, raw.clone())?;
                    if !(unit.mass > 0.0) || !unit.mass.is_finite() {
                        return Err(invalid(
                            "shape",
                            "density does not integrate to a positive mass",
                        ));
                    }
                    segments.push(Segment::new(
                        *lo,
                        len,
                        raw.scale(weight / total / unit.mass),
                    )?);
                }
            }
        }
        Self::from_parts(atoms, segments)
    }

    fn from_parts(mut atoms: Vec<(f64, f64)>, segments: Vec<Segment>) -> Result<Self> {
        for &(at, mass) in &atoms {
            if !at.is_finite() || at < 0.0 {
                return Err(invalid(
                    "at",
                    format!("atom position {at} must be finite and >= 0"),
                ));
            }
            if !mass.is_finite() || mass < 0.0 {
                return Err(invalid(
                    "mass",
                    format!("atom mass {mass} is not a probability"),
                ));
            }
        }
        atoms.retain(|a| a.1 > 0.0);
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (at, mass) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == at => last.1 += mass,
                _ => merged.push((at, mass)),
            }
        }

        let mut segments: Vec<Segment> = segments.into_iter().filter(|s| s.mass != 0.0).collect();
        for s in &segments {
            if s.mass < 0.0 {
                return Err(Error::NegativeDensity { at: s.lo });
            }
        }
        segments.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for w in segments.windows(2) {
            if w[0].hi() > w[1].lo {
                return Err(Error::Overlap { at: w[1].lo });
            }
        }

        // Split segments at interior atoms so pieces never overlap.
        let mut split = Vec::with_capacity(segments.len());
        for seg in segments {
            let mut rest = seg;
            for &(at, _) in &merged {
                let d = at - rest.lo;
                if d > 0.0 && d < rest.len {
                    let (left, right) = rest.split(at)?;
                    split.push(left);
                    rest = right;
                }
            }
            split.push(rest);
        }

        let mut pieces: Vec<Piece> = merged
            .into_iter()
            .map(|(at, mass)| Piece::Atom { at, mass })
            .chain(split.into_iter().map(Piece::Segment))
            .collect();
        // Atoms sort before a segment starting at the same point.
        pieces.sort_by(|a, b| {
            a.start().total_cmp(&b.start()).then_with(|| {
                let rank = |p: &Piece| matches!(p, Piece::Segment(_)) as u8;
                rank(a).cmp(&rank(b))
            })
        });
        if pieces.is_empty() {
            return Err(Error::Empty {
                what: "distribution",
            });
        }

        let n = pieces.len();
        let mut mass_before = vec![0.0; n + 1];
        let mut moment_before = vec![0.0; n + 1];
        for (i, p) in pieces.iter().enumerate() {
            mass_before[i + 1] = mass_before[i] + p.mass();
            moment_before[i + 1] = moment_before[i] + p.moment();
        }
        let mut mass_from = vec![0.0; n + 1];
        let mut moment_from = vec![0.0; n + 1];
        for i in (0..n).rev() {
            mass_from[i] = mass_from[i + 1] + pieces[i].mass();
            moment_from[i] = moment_from[i + 1] + pieces[i].moment();
        }
        let total = mass_before[n];
        if !((total - 1.0).abs() <= MASS_TOLERANCE) {
            return Err(Error::NotNormalized { total });
        }
        Ok(Self {
            pieces,
            mass_before,
            mass_from,
            moment_before,
            moment_from,
        })
    }

    /// Lowest point of the support.
    pub fn support_lo(&self) -> f64 {
        self.pieces[0].start()
    }

    /// Highest point of the support; infinite for unbounded tails.
    pub fn support_hi(&self) -> f64 {
        self.pieces[self.pieces.len() - 1].end()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass_before[self.pieces.len()]
    }

    pub fn mean(&self) -> f64 {
        self.moment_from[0]
    }

    /// True when the distribution consists of atoms only.
    pub fn is_discrete(&self) -> bool {
        self.pieces.iter().all(|p| matches!(p, Piece::Atom { .. }))
    }

    /// `(position, mass)` of every atom, ascending.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Atom { at, mass } => Some((*at, *mass)),
                Piece::Segment(_) => None,
            })
            .collect()
    }

    /// Mass of the atom at `x` (zero if none).
    pub fn atom_mass(&self, x: f64) -> f64 {
        self.pieces
            .iter()
            .find_map(|p| match p {
                Piece::Atom { at, mass } if *at == x => Some(*mass),
                _ => None,
            })
            .unwrap_or(0.0)
    }

    /// `x` times the atom mass at `x`: the overlap of the two partial expectations.
    pub fn atom_contribution(&self, x: f64) -> f64 {
        x * self.atom_mass(x)
    }

    /// Finite piece boundaries and atom positions, ascending and distinct.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .pieces
            .iter()
            .flat_map(|p| [p.start(), p.end()])
            .filter(|x| x.is_finite())
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Density of the continuous part at `x`.
    pub fn density(&self, x: f64) -> f64 {
        self.pieces
            .iter()
            .find_map(|p| match p {
                Piece::Segment(s) if x >= s.lo && x < s.hi() => Some(s.density.eval(x - s.lo)),
                _ => None,
            })
            .unwrap_or(0.0)
    }

    /// Number of pieces starting at or before `x` (inclusive) or strictly before.
    fn count_started(&self, x: f64, inclusive: bool) -> usize {
        if inclusive {
            self.pieces.partition_point(|p| p.start() <= x)
        } else {
            self.pieces.partition_point(|p| p.start() < x)
        }
    }

    fn mass_up_to(&self, x: f64, inclusive: bool) -> f64 {
        let hi = self.support_hi();
        if x > hi || (inclusive && x == hi) {
            return 1.0;
        }
        let count = self.count_started(x, inclusive);
        if count == 0 {
            return 0.0;
        }
        let k = count - 1;
        let partial = match &self.pieces[k] {
            Piece::Atom { mass, .. } => *mass,
            Piece::Segment(s) => s.mass_below(x),
        };
        (self.mass_before[k] + partial).min(1.0)
    }

    fn mass_from_point(&self, x: f64, inclusive: bool) -> f64 {
        let count = self.count_started(x, !inclusive);
        let tail = self.mass_from[count];
        if count == 0 {
            return tail;
        }
        match &self.pieces[count - 1] {
            Piece::Atom { .. } => tail,
            Piece::Segment(s) => tail + s.mass_above(x),
        }
    }

    fn moment_up_to(&self, x: f64, inclusive: bool) -> f64 {
        let count = self.count_started(x, inclusive);
        if count == 0 {
            return 0.0;
        }
        let k = count - 1;
        let partial = match &self.pieces[k] {
            Piece::Atom { at, mass } => at * mass,
            Piece::Segment(s) => s.moment_below(x),
        };
        self.moment_before[k] + partial
    }

    fn moment_from_point(&self, x: f64, inclusive: bool) -> f64 {
        let count = self.count_started(x, !inclusive);
        let tail = self.moment_from[count];
        if count == 0 {
            return tail;
        }
        match &self.pieces[count - 1] {
            Piece::Atom { .. } => tail,
            Piece::Segment(s) => tail + s.moment_above(x),
        }
    }

    /// `P[V <= x]`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.mass_up_to(x, true)
    }

    /// `P[V < x]`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        self.mass_up_to(x, false)
    }

    /// `P[V > x]`, summed from the right tail.
    pub fn prob_greater(&self, x: f64) -> f64 {
        self.mass_from_point(x, false)
    }

    /// `P[V >= x]`, summed from the right tail.
    pub fn prob_at_least(&self, x: f64) -> f64 {
        self.mass_from_point(x, true)
    }

    /// `E[V 1{V <= x}]`.
    pub fn partial_expectation_below(&self, x: f64) -> f64 {
        self.moment_up_to(x, true)
    }

    /// `E[V 1{V < x}]`.
    pub fn partial_expectation_below_strict(&self, x: f64) -> f64 {
        self.moment_up_to(x, false)
    }

    /// `E[V 1{V >= x}]`.
    pub fn partial_expectation_above(&self, x: f64) -> f64 {
        self.moment_from_point(x, true)
    }

    /// `E[V 1{V > x}]`.
    pub fn partial_expectation_above_strict(&self, x: f64) -> f64 {
        self.moment_from_point(x, false)
    }

    /// Smallest `x` with `cdf(x) >= u`. Level 0 maps to the bottom of the
    /// support; flat CDF regions resolve to their left end.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(invalid(
                "u",
                format!("quantile level {u} is outside [0, 1]"),
            ));
        }
        Ok(self.quantile_unchecked(u))
    }

    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.support_lo();
        }
        let k = self.mass_before[1..].partition_point(|&c| c < u - PLATEAU_SNAP);
        self.solve_in_piece(k, u)
    }

    /// Smallest `x` with `cdf(x) > u`: the upper end of the `u`-quantile range.
    pub fn upper_quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&u) {
            return Err(invalid(
                "u",
                format!("upper quantile level {u} is outside [0, 1)"),
            ));
        }
        let k = self.mass_before[1..].partition_point(|&c| c <= u + PLATEAU_SNAP);
        Ok(self.solve_in_piece(k, u))
    }

    fn solve_in_piece(&self, k: usize, u: f64) -> f64 {
        if k >= self.pieces.len() {
            return self.support_hi();
        }
        match &self.pieces[k] {
            Piece::Atom { at, .. } => *at,
            Piece::Segment(s) => s.solve_mass(u - self.mass_before[k]),
        }
    }

    /// Draws a value by inverting the CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile_unchecked(rng.gen::<f64>())
    }

    /// Agrees with `self` below `b`, puts all remaining mass (`1 - F(b-)`)
    /// on an atom at `b`, and nothing above.
    pub fn truncate_at(&self, b: f64) -> Result<Self> {
        if !(b >= self.support_lo()) || !b.is_finite() {
            return Err(invalid(
                "b",
                format!(
                    "truncation point {b} is below the support start {}",
                    self.support_lo()
                ),
            ));
        }
        let mut atoms = Vec::new();
        let mut segments = Vec::new();
        for p in &self.pieces {
            match p {
                Piece::Atom { at, mass } if *at < b => atoms.push((*at, *mass)),
                Piece::Segment(s) if s.hi() <= b => segments.push(s.clone()),
                Piece::Segment(s) if s.lo < b => {
                    segments.push(Segment::new(s.lo, b - s.lo, s.density.clone())?)
                }
                _ => {}
            }
        }
        let rest = self.prob_at_least(b);
        if rest > 0.0 {
            atoms.push((b, rest));
        }
        Self::from_parts(atoms, segments)
    }

    /// Distribution of `factor * V`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !factor.is_finite() || factor < 0.0 {
            return Err(invalid(
                "factor",
                format!("{factor} must be finite and >= 0"),
            ));
        }
        if factor == 0.0 {
            return Self::point_mass(0.0);
        }
        let mut atoms = Vec::new();
        let mut segments = Vec::new();
        for p in &self.pieces {
            match p {
                Piece::Atom { at, mass } => atoms.push((at * factor, *mass)),
                Piece::Segment(s) => segments.push(Segment::new(
                    s.lo * factor,
                    s.len * factor,
                    s.density.rescale(factor),
                )?),
            }
        }
        Self::from_parts(atoms, segments)
    }

    /// Cumulative probability at every piece boundary, ascending.
    pub fn cumulative_levels(&self) -> &[f64] {
        &self.mass_before
    }

    /// CDF on `(a, b)` as a function of `y = x - a`.
    fn local_cdf(&self, a: f64, b: f64) -> ExpPoly {
        match self.covering_index(a, b) {
            Some(k) => match &self.pieces[k] {
                Piece::Segment(s) => s.local_cdf_poly(a, self.mass_before[k]),
                Piece::Atom { .. } => unreachable!(),
            },
            None => ExpPoly::constant(self.cdf(probe(a, b))),
        }
    }

    /// `P[V > x]` on `(a, b)` as a function of `y = x - a`.
    fn local_survival(&self, a: f64, b: f64) -> ExpPoly {
        match self.covering_index(a, b) {
            Some(k) => match &self.pieces[k] {
                Piece::Segment(s) => s
                    .anti
                    .shift(a - s.lo)
                    .scale(-1.0)
                    .add_constant(s.anti_hi + self.mass_from[k + 1]),
                Piece::Atom { .. } => unreachable!(),
            },
            None => ExpPoly::constant(self.prob_greater(probe(a, b))),
        }
    }

    fn covering_index(&self, a: f64, b: f64) -> Option<usize> {
        let count = self.count_started(a, true);
        if count == 0 {
            return None;
        }
        match &self.pieces[count - 1] {
            Piece::Segment(s) if s.hi() >= b => Some(count - 1),
            _ => None,
        }
    }
}

fn check_gft_t(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid("t", format!("{t} must be positive and finite")));
    }
    Ok(())
}

/// Unnormalized density of a shape in the local coordinate of `[lo, lo + len]`.
fn shape_density(lo: f64, len: f64, shape: &Shape) -> Result<ExpPoly> {
    match shape {
        Shape::Uniform => {
            if len.is_infinite() {
                return Err(invalid("hi", "uniform segments must be bounded"));
            }
            Ok(ExpPoly::constant(1.0))
        }
        Shape::Exponential { rate } => {
            if !rate.is_finite() {
                return Err(invalid("rate", format!("{rate} is not finite")));
            }
            if len.is_infinite() && *rate <= 0.0 {
                return Err(invalid(
                    "rate",
                    "unbounded exponential segments need a positive rate",
                ));
            }
            Ok(ExpPoly::monomial(1.0, 0, -rate))
        }
        Shape::Polynomial { coefficients } => {
            if len.is_infinite() {
                return Err(invalid("hi", "polynomial segments must be bounded"));
            }
            if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
                return Err(invalid(
                    "coefficients",
                    "need at least one finite coefficient",
                ));
            }
            Ok(ExpPoly::polynomial(coefficients).shift(lo))
        }
    }
}

fn probe(a: f64, b: f64) -> f64 {
    if b.is_finite() {
        0.5 * (a + b)
    } else {
        a + 1.0
    }
}

/// Intervals between consecutive breakpoints of `ds`, plus the unbounded
/// tail when any member has one.
fn merged_intervals(ds: &[&Distribution]) -> Vec<(f64, f64)> {
    let mut points: Vec<f64> = ds.iter().flat_map(|d| d.breakpoints()).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut intervals: Vec<(f64, f64)> = points.windows(2).map(|w| (w[0], w[1])).collect();
    if ds.iter().any(|d| d.support_hi().is_infinite()) {
        if let Some(&last) = points.last() {
            intervals.push((last, f64::INFINITY));
        }
    }
    intervals
}

/// `E[(upper - lower)^+]` for independent draws, integrating
/// `P[lower <= x] * P[upper > x]` in closed form.
pub fn expected_excess(lower: &Distribution, upper: &Distribution) -> f64 {
    merged_intervals(&[lower, upper])
        .into_iter()
        .map(|(a, b)| {
            lower
                .local_cdf(a, b)
                .mul(&upper.local_survival(a, b))
                .integrate(0.0, b - a)
        })
        .sum()
}

/// Distribution of the maximum of independent draws: its CDF is the
/// product of the component CDFs, kept in closed form piece by piece.
pub fn max_of(ds: &[Distribution]) -> Result<Distribution> {
    match ds {
        [] => {
            return Err(Error::Empty {
                what: "distribution list",
            })
        }
        [d] => return Ok(d.clone()),
        _ => {}
    }
    let mut points: Vec<f64> = ds.iter().flat_map(|d| d.breakpoints()).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut atoms = Vec::new();
    for &x in &points {
        let at: f64 = ds.iter().map(|d| d.cdf(x)).product();
        let before: f64 = ds.iter().map(|d| d.cdf_left(x)).product();
        let jump = at - before;
        if jump > 4.0 * f64::EPSILON {
            atoms.push((x, jump));
        }
    }

    let refs: Vec<&Distribution> = ds.iter().collect();
    let intervals = merged_intervals(&refs);
    let mut segments = Vec::new();
    for (a, b) in intervals {
        let product = ds
            .iter()
            .fold(ExpPoly::constant(1.0), |acc, d| acc.mul(&d.local_cdf(a, b)));
        let density = product.derivative();
        if density.is_zero() {
            continue;
        }
        segments.push(Segment::new(a, b - a, density)?);
    }
    Distribution::from_parts(atoms, segments)
}

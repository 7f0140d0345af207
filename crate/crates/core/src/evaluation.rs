//! Expected welfare, gain from trade and approximation ratios.
//!
//! Fixed-price figures are assembled from four one-dimensional partial
//! expectations and are exact up to rounding. The random-quantile mechanism
//! needs one adaptive integral over the quantile level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{expected_excess, max_of, Distribution};
use crate::error::{invalid, Result};
use crate::mechanisms::{PostedPrice, RandomQuantileMechanism};
use crate::quadrature::{integrate_pieces, Quadrature};

/// Default absolute tolerance (per unit of value scale) for the
/// random-quantile integral.
pub const DEFAULT_QUAD_TOL: f64 = 1e-7;

/// Points on the price grid searched by [`best_fixed_price`].
pub const PRICE_GRID_POINTS: usize = 10_001;

/// `E[max{s, b}]`.
pub fn optimal_welfare(seller: &Distribution, buyer: &Distribution) -> f64 {
    max_of(&[seller.clone(), buyer.clone()])
        .expect("two components")
        .mean()
}

/// `E[(b - s)^+]`, integrated directly rather than as a difference.
pub fn optimal_gft(seller: &Distribution, buyer: &Distribution) -> f64 {
    expected_excess(seller, buyer)
}

/// `E[(b - s); s <= p <= b]`.
pub fn gft_at_price(p: f64, seller: &Distribution, buyer: &Distribution) -> f64 {
    seller.cdf(p) * buyer.partial_expectation_above(p)
        - buyer.prob_at_least(p) * seller.partial_expectation_below(p)
}

/// Expected welfare of posting `p`: `E[s]` plus the realized gain.
pub fn fixed_price_welfare(p: f64, seller: &Distribution, buyer: &Distribution) -> f64 {
    seller.mean() + gft_at_price(p, seller, buyer)
}

fn value_scale(seller: &Distribution, buyer: &Distribution) -> f64 {
    (seller.mean().abs() + buyer.mean().abs()).max(1.0)
}

/// Expected gain from trade of the random-quantile mechanism,
/// `int_{1/e}^1 gft(q(x)) / x dx`.
pub fn random_quantile_gft(
    m: &RandomQuantileMechanism,
    buyer: &Distribution,
    tol: f64,
) -> Quadrature {
    random_quantile_gft_against(m, m.seller(), buyer, tol)
}

/// Like [`random_quantile_gft`], but with prices drawn from the quantiles
/// of the mechanism's own seller prior while trade happens against
/// `seller`.
pub fn random_quantile_gft_against(
    m: &RandomQuantileMechanism,
    seller: &Distribution,
    buyer: &Distribution,
    tol: f64,
) -> Quadrature {
    let prior = m.seller();
    let lo = (-1.0f64).exp();
    let mut points = vec![lo, 1.0];
    points.extend_from_slice(prior.cumulative_levels());
    for a in buyer.breakpoints().into_iter().chain(seller.breakpoints()) {
        points.push(prior.cdf(a));
        points.push(prior.cdf_left(a));
    }
    points.retain(|&x| x >= lo && x <= 1.0);
    points.sort_by(f64::total_cmp);
    points.dedup();
    let integrand = |x: f64| gft_at_price(prior.quantile_unchecked(x), seller, buyer) / x;
    integrate_pieces(integrand, &points, tol * value_scale(seller, buyer))
}

/// Expected welfare of the random-quantile mechanism at the default
/// tolerance.
pub fn random_quantile_welfare(m: &RandomQuantileMechanism, buyer: &Distribution) -> f64 {
    random_quantile_welfare_with_tol(m, buyer, DEFAULT_QUAD_TOL).value
}

pub fn random_quantile_welfare_with_tol(
    m: &RandomQuantileMechanism,
    buyer: &Distribution,
    tol: f64,
) -> Quadrature {
    let q = random_quantile_gft(m, buyer, tol);
    Quadrature {
        value: m.seller().mean() + q.value,
        ..q
    }
}

/// Expected gain from trade of any posted-price rule, with an error
/// estimate (zero for fixed prices).
pub fn mechanism_gft(
    mech: &PostedPrice,
    seller: &Distribution,
    buyer: &Distribution,
    tol: f64,
) -> Quadrature {
    match mech {
        PostedPrice::Fixed(f) => Quadrature {
            value: gft_at_price(f.price(), seller, buyer),
            error: 0.0,
            evaluations: 1,
        },
        PostedPrice::RandomQuantile(m) => random_quantile_gft(m, buyer, tol),
    }
}

pub fn mechanism_welfare(
    mech: &PostedPrice,
    seller: &Distribution,
    buyer: &Distribution,
    tol: f64,
) -> f64 {
    seller.mean() + mechanism_gft(mech, seller, buyer, tol).value
}

/// `lambda = 1 / (1 - e^-t)` of the exponential gain-from-trade family.
pub fn exponential_lambda(t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(
            "t",
            format!("must be positive and finite, got {t}"),
        ));
    }
    Ok(-1.0 / (-t).exp_m1())
}

/// Closed-form gain from trade of price `p` on the exponential family.
pub fn gft_at_price_exponential(p: f64, t: f64) -> Result<f64> {
    let lambda = exponential_lambda(t)?;
    if !(0.0..=t).contains(&p) {
        return Err(invalid("p", format!("must lie in [0, {t}], got {p}")));
    }
    // (t+2)/e^2t + 2/e^t - (p+2)/e^(p+t) - e^p (t+2-p)/e^2t, grouped so
    // both brackets vanish exactly at p = 0.
    let near = -(t + 2.0) * p.exp_m1() + p * p.exp();
    let far = -2.0 * (-p).exp_m1() - p * (-p).exp();
    let raw = (-2.0 * t).exp() * near + (-t).exp() * far;
    Ok(lambda * lambda * raw.max(0.0))
}

/// Closed-form optimal gain from trade of the exponential family.
pub fn optimal_gft_exponential(t: f64) -> Result<f64> {
    let lambda = exponential_lambda(t)?;
    Ok(lambda * lambda * ((t - 2.0) * (-t).exp() + (t + 2.0) * (-2.0 * t).exp()))
}

/// Lower bound `(x + c - 1) / c` on the gain-from-trade ratio of a
/// mechanism with welfare ratio `x`, where `c = OPTGFT / OPT`. The result
/// is clamped to `[0, 1]`.
pub fn gft_ratio_from_welfare_ratio(x: f64, c: f64) -> Result<f64> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(invalid("c", format!("must lie in (0, 1], got {c}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid("x", format!("must lie in [0, 1], got {x}")));
    }
    Ok(((x - (1.0 - c)) / c).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Welfare,
    Gft,
}

impl Objective {
    pub fn at_price(self, p: f64, seller: &Distribution, buyer: &Distribution) -> f64 {
        match self {
            Objective::Welfare => fixed_price_welfare(p, seller, buyer),
            Objective::Gft => gft_at_price(p, seller, buyer),
        }
    }
}

fn finite_top(d: &Distribution) -> f64 {
    let hi = d.support_hi();
    if hi.is_finite() {
        hi
    } else {
        d.quantile_unchecked(1.0 - 1e-12)
    }
}

/// Best fixed price by a grid over the joint support plus every
/// breakpoint, refined by golden-section search around the grid winner.
/// Ties resolve to the smallest price. Returns `(price, value)`.
pub fn best_fixed_price(
    seller: &Distribution,
    buyer: &Distribution,
    objective: Objective,
) -> (f64, f64) {
    let lo = seller.support_lo().min(buyer.support_lo());
    let hi = finite_top(seller).max(finite_top(buyer));
    let last = (PRICE_GRID_POINTS - 1) as f64;
    let mut grid: Vec<f64> = (0..PRICE_GRID_POINTS)
        .map(|i| lo + (hi - lo) * (i as f64 / last))
        .collect();
    grid.extend(
        seller
            .breakpoints()
            .into_iter()
            .chain(buyer.breakpoints())
            .filter(|x| x.is_finite()),
    );
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let f = |p: f64| objective.at_price(p, seller, buyer);
    let mut best = 0;
    let mut best_value = f(grid[0]);
    for (i, &p) in grid.iter().enumerate().skip(1) {
        let v = f(p);
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    let mut price = grid[best];
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(grid.len() - 1)];
    if b > a {
        let (p, v) = golden_max(&f, a, b);
        let margin = 4.0 * f64::EPSILON * best_value.abs().max(1.0);
        if v > best_value + margin {
            price = p;
            best_value = v;
        }
    }
    (price, best_value)
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if b - a <= 1e-13 * b.abs().max(1.0) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub samples: u64,
    pub mean: f64,
    pub std_error: f64,
}

/// Seeded Monte Carlo estimate of a mechanism's expected welfare. Each
/// sample draws the seller value, the buyer value and the price draw, in
/// that order, from one ChaCha8 stream.
pub fn monte_carlo_welfare(
    mech: &PostedPrice,
    seller: &Distribution,
    buyer: &Distribution,
    samples: u64,
    seed: u64,
) -> MonteCarlo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for n in 1..=samples {
        let s = seller.sample(&mut rng);
        let b = buyer.sample(&mut rng);
        let u: f64 = rng.gen();
        let w = mech.outcome(s, b, u).welfare(s, b);
        let delta = w - mean;
        mean += delta / n as f64;
        m2 += delta * (w - mean);
    }
    let std_error = if samples > 1 {
        (m2 / (samples - 1) as f64 / samples as f64).sqrt()
    } else {
        0.0
    };
    MonteCarlo {
        samples,
        mean,
        std_error,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mechanism: String,
    /// Set when the buyer is a point mass taken from a grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buyer_value: Option<f64>,
    /// Posted price, for deterministic mechanisms.
    pub price: Option<f64>,
    pub mech_welfare: f64,
    pub opt_welfare: f64,
    pub ratio: f64,
    pub mech_gft: f64,
    pub opt_gft: f64,
    pub gft_ratio: f64,
    pub quadrature_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarlo>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        1.0
    }
}

/// Evaluates a resolved rule on a seller/buyer pair.
pub fn evaluate(
    name: &str,
    mech: &PostedPrice,
    seller: &Distribution,
    buyer: &Distribution,
    tol: f64,
) -> EvalReport {
    let opt_welfare = optimal_welfare(seller, buyer);
    let opt_gft = optimal_gft(seller, buyer);
    let gft = mechanism_gft(mech, seller, buyer, tol);
    let mech_welfare = seller.mean() + gft.value;
    let rounding = 1e-14 * opt_welfare.abs().max(1.0);
    EvalReport {
        mechanism: name.to_string(),
        buyer_value: None,
        price: mech.deterministic_price(),
        mech_welfare,
        opt_welfare,
        ratio: ratio(mech_welfare, opt_welfare),
        mech_gft: gft.value,
        opt_gft,
        gft_ratio: ratio(gft.value, opt_gft),
        quadrature_error: gft.error + rounding,
        monte_carlo: None,
    }
}

/// Formats with 12 significant digits, like C's `%.12g`.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!(
            "{}e{sign}{:02}",
            trim_zeros(mantissa.to_string()),
            exp.abs()
        )
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

impl EvalReport {
    pub const CSV_COLUMNS: [&'static str; 12] = [
        "mechanism",
        "buyer_value",
        "price",
        "mech_welfare",
        "opt_welfare",
        "ratio",
        "mech_gft",
        "opt_gft",
        "gft_ratio",
        "quadrature_error",
        "mc_welfare",
        "mc_std_error",
    ];

    pub fn csv_header() -> String {
        Self::CSV_COLUMNS.join(",")
    }

    /// One CSV row in [`EvalReport::CSV_COLUMNS`] order; absent values are
    /// empty fields.
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(format_sig).unwrap_or_default();
        [
            self.mechanism.clone(),
            opt(self.buyer_value),
            opt(self.price),
            format_sig(self.mech_welfare),
            format_sig(self.opt_welfare),
            format_sig(self.ratio),
            format_sig(self.mech_gft),
            format_sig(self.opt_gft),
            format_sig(self.gft_ratio),
            format_sig(self.quadrature_error),
            opt(self.monte_carlo.map(|m| m.mean)),
            opt(self.monte_carlo.map(|m| m.std_error)),
        ]
        .join(",")
    }
}

//! Posted-price mechanisms for bilateral trade.
//!
//! Every mechanism here posts a price that depends only on the value
//! distributions, never on the reports, so each one is dominant-strategy
//! truthful, ex-post individually rational and strongly budget balanced.

use serde::{Deserialize, Serialize};

use crate::distributions::Distribution;
use crate::error::{invalid, Error, Result};
use crate::evaluation::{best_fixed_price, Objective};

/// Result of one run of a bilateral mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub traded: bool,
    pub seller_payment_received: f64,
    pub buyer_payment_made: f64,
    /// Fraction of the good that ends with the buyer.
    pub allocation: f64,
}

impl Outcome {
    pub fn no_trade() -> Self {
        Self {
            traded: false,
            seller_payment_received: 0.0,
            buyer_payment_made: 0.0,
            allocation: 0.0,
        }
    }

    pub fn trade_at(price: f64) -> Self {
        Self {
            traded: true,
            seller_payment_received: price,
            buyer_payment_made: price,
            allocation: 1.0,
        }
    }

    /// Seller's utility: value kept plus payment received.
    pub fn seller_utility(&self, s: f64) -> f64 {
        (1.0 - self.allocation) * s + self.seller_payment_received
    }

    /// Buyer's utility: value received minus payment made.
    pub fn buyer_utility(&self, b: f64) -> f64 {
        self.allocation * b - self.buyer_payment_made
    }

    /// Realized welfare `s` or `b`.
    pub fn welfare(&self, s: f64, b: f64) -> f64 {
        (1.0 - self.allocation) * s + self.allocation * b
    }
}

/// Trades iff `s <= p <= b`, both sides at `p`.
pub fn fixed_price_outcome(p: f64, s: f64, b: f64) -> Outcome {
    if s <= p && b >= p {
        Outcome::trade_at(p)
    } else {
        Outcome::no_trade()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPriceMechanism {
    price: f64,
}

impl FixedPriceMechanism {
    pub fn new(price: f64) -> Result<Self> {
        if !(price.is_finite() && price >= 0.0) {
            return Err(invalid(
                "price",
                format!("must be finite and >= 0, got {price}"),
            ));
        }
        Ok(Self { price })
    }

    pub fn price(&self) -> f64 {
        self.price
    }

    pub fn outcome(&self, s: f64, b: f64) -> Outcome {
        fixed_price_outcome(self.price, s, b)
    }
}

/// Median of the seller's distribution, taking the right end of a flat
/// region of the CDF at 1/2: the smallest `x` with `F_s(x) > 1/2`.
///
/// Where the CDF crosses 1/2 without a plateau this is the usual median.
/// When half the mass sits on each side of a gap, the price sits at the
/// bottom of the upper half, so the seller sells with probability >= 1/2.
pub fn median_price(seller: &Distribution) -> f64 {
    seller.upper_quantile(0.5).expect("0.5 is a valid level")
}

/// Price `W` that splits the buyer's mean in half:
/// the smallest `W` with `E[b; b > W] <= E[b] / 2`.
///
/// At that point `E[b; b >= W] >= E[b] / 2`, so both halves of the
/// balancing equation hold even when `W` is an atom.
pub fn weighted_median_price(buyer: &Distribution) -> Result<f64> {
    let mean = buyer.mean();
    if !(mean > 0.0) {
        return Err(invalid(
            "buyer",
            format!("weighted median needs a positive mean, got {mean}"),
        ));
    }
    let half = 0.5 * mean;
    let upper = |w: f64| buyer.partial_expectation_above_strict(w);
    let mut lo = buyer.support_lo();
    if upper(lo) <= half {
        return Ok(lo);
    }
    let mut hi = buyer.support_hi();
    if hi.is_infinite() {
        hi = lo.abs().max(1.0);
        while upper(hi) > half {
            hi *= 2.0;
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if upper(mid) <= half {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // The answer sits exactly on an atom whenever the halving point falls
    // inside a jump.
    let snapped = buyer
        .atoms()
        .into_iter()
        .map(|(x, _)| x)
        .find(|&x| x >= lo && x <= hi && upper(x) <= half);
    Ok(snapped.unwrap_or(hi))
}

fn inv_e() -> f64 {
    (-1.0f64).exp()
}

/// CDF `ln(e x)` of the quantile level drawn by the random-quantile
/// mechanism; the density is `1/x` on `[1/e, 1]`.
pub fn random_quantile_price_cdf(x: f64) -> Result<f64> {
    if !(x >= inv_e() && x <= 1.0) {
        return Err(invalid("x", format!("must lie in [1/e, 1], got {x}")));
    }
    Ok((1.0 + x.ln()).clamp(0.0, 1.0))
}

/// Quantile level for a uniform draw `u`: the inverse of `ln(e x)`.
pub fn random_quantile_level(u: f64) -> f64 {
    (u.clamp(0.0, 1.0) - 1.0).exp()
}

/// Posts the seller's `x`-quantile, with `x` drawn on `[1/e, 1]` with
/// density `1/x`.
#[derive(Debug, Clone)]
pub struct RandomQuantileMechanism {
    seller: Distribution,
}

impl RandomQuantileMechanism {
    pub fn new(seller: Distribution) -> Self {
        Self { seller }
    }

    pub fn seller(&self) -> &Distribution {
        &self.seller
    }

    /// Price for the uniform draw `u` (clamped to `[0, 1]`).
    pub fn sample_price(&self, u: f64) -> f64 {
        self.seller.quantile_unchecked(random_quantile_level(u))
    }

    /// The deterministic mechanism obtained by fixing the draw.
    pub fn frozen(&self, u: f64) -> FixedPriceMechanism {
        FixedPriceMechanism {
            price: self.sample_price(u),
        }
    }

    pub fn outcome(&self, s: f64, b: f64, u: f64) -> Outcome {
        fixed_price_outcome(self.sample_price(u), s, b)
    }
}

/// A resolved posted-price rule.
#[derive(Debug, Clone)]
pub enum PostedPrice {
    Fixed(FixedPriceMechanism),
    RandomQuantile(RandomQuantileMechanism),
}

impl PostedPrice {
    pub fn fixed(price: f64) -> Result<Self> {
        FixedPriceMechanism::new(price).map(PostedPrice::Fixed)
    }

    /// Price posted for the uniform draw `u`; fixed prices ignore it.
    pub fn price_for_draw(&self, u: f64) -> f64 {
        match self {
            PostedPrice::Fixed(m) => m.price(),
            PostedPrice::RandomQuantile(m) => m.sample_price(u),
        }
    }

    pub fn deterministic_price(&self) -> Option<f64> {
        match self {
            PostedPrice::Fixed(m) => Some(m.price()),
            PostedPrice::RandomQuantile(_) => None,
        }
    }

    pub fn outcome(&self, s: f64, b: f64, u: f64) -> Outcome {
        fixed_price_outcome(self.price_for_draw(u), s, b)
    }
}

/// JSON literal for a mechanism: `{"kind": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum MechanismLiteral {
    Fixed {
        price: f64,
    },
    Median,
    WeightedMedian,
    RandomQuantile,
    /// Median of the buyer's distribution.
    BuyerMedian,
    /// Best fixed price found by search, knowing both distributions.
    BestFixed {
        #[serde(default)]
        objective: Objective,
    },
}

impl MechanismLiteral {
    pub fn name(&self) -> &'static str {
        match self {
            MechanismLiteral::Fixed { .. } => "fixed",
            MechanismLiteral::Median => "median",
            MechanismLiteral::WeightedMedian => "weighted_median",
            MechanismLiteral::RandomQuantile => "random_quantile",
            MechanismLiteral::BuyerMedian => "buyer_median",
            MechanismLiteral::BestFixed { .. } => "best_fixed",
        }
    }

    /// Resolves the rule against a seller and buyer distribution.
    pub fn resolve(&self, seller: &Distribution, buyer: &Distribution) -> Result<PostedPrice> {
        match self {
            MechanismLiteral::Fixed { price } => PostedPrice::fixed(*price),
            MechanismLiteral::Median => PostedPrice::fixed(median_price(seller)),
            MechanismLiteral::WeightedMedian => PostedPrice::fixed(weighted_median_price(buyer)?),
            MechanismLiteral::RandomQuantile => Ok(PostedPrice::RandomQuantile(
                RandomQuantileMechanism::new(seller.clone()),
            )),
            MechanismLiteral::BuyerMedian => PostedPrice::fixed(median_price(buyer)),
            MechanismLiteral::BestFixed { objective } => {
                let (price, _) = best_fixed_price(seller, buyer, *objective);
                PostedPrice::fixed(price)
            }
        }
    }

    /// Worst-case welfare ratio the rule guarantees on every pair of
    /// distributions, where one is known.
    pub fn guaranteed_ratio(&self) -> Option<f64> {
        match self {
            MechanismLiteral::Median | MechanismLiteral::WeightedMedian => Some(0.5),
            MechanismLiteral::RandomQuantile | MechanismLiteral::BestFixed { .. } => {
                Some(1.0 - inv_e())
            }
            MechanismLiteral::Fixed { .. } | MechanismLiteral::BuyerMedian => None,
        }
    }
}

impl std::str::FromStr for MechanismLiteral {
    type Err = Error;

    /// Parses either a JSON literal or a bare kind name without params.
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        let json = if trimmed.starts_with('{') {
            trimmed.to_string()
        } else {
            format!(r#"{{"kind":"{trimmed}"}}"#)
        };
        serde_json::from_str(&json).map_err(|e| Error::Malformed(format!("mechanism: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn fixed_price_trades_on_weak_inequalities() {
        let o = fixed_price_outcome(0.5, 0.3, 0.7);
        assert!(o.traded);
        assert_eq!(o.seller_payment_received, 0.5);
        assert_eq!(o.buyer_payment_made, 0.5);
        assert_eq!(o.allocation, 1.0);
        assert_eq!(fixed_price_outcome(0.5, 0.6, 0.7), Outcome::no_trade());
        assert!(fixed_price_outcome(0.5, 0.5, 0.5).traded);
    }

    #[test]
    fn outcomes_are_budget_balanced_and_ir() {
        for &p in &[0.0, 0.25, 0.5, 1.0] {
            for &s in &[0.0, 0.2, 0.5, 0.9] {
                for &b in &[0.0, 0.3, 0.5, 1.0] {
                    let o = fixed_price_outcome(p, s, b);
                    assert_eq!(o.seller_payment_received, o.buyer_payment_made);
                    if o.traded {
                        assert!(s <= o.seller_payment_received && o.buyer_payment_made <= b);
                    } else {
                        assert_eq!(o.allocation, 0.0);
                        assert_eq!(o.buyer_payment_made, 0.0);
                    }
                    assert!(o.seller_utility(s) >= s && o.buyer_utility(b) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn negative_price_is_rejected() {
        assert!(FixedPriceMechanism::new(-1.0).is_err());
        assert!(FixedPriceMechanism::new(f64::NAN).is_err());
    }

    #[test]
    fn median_examples() {
        assert!(close(
            median_price(&Distribution::uniform(0.0, 1.0).unwrap()),
            0.5,
            1e-15
        ));
        let e = Distribution::exponential(1.0).unwrap();
        assert!(close(median_price(&e), 2f64.ln(), 1e-12));
        // Half the mass near 0, half near 1: the median is 1.
        let eps = 1e-3;
        let d = Distribution::from_components(&[
            crate::Component::segment(0.0, eps, 0.5),
            crate::Component::segment(1.0, 1.0 + eps, 0.5),
        ])
        .unwrap();
        assert_eq!(median_price(&d), 1.0);
    }

    #[test]
    fn weighted_median_examples() {
        let w = weighted_median_price(&Distribution::uniform(0.0, 1.0).unwrap()).unwrap();
        assert!(close(w, 0.5f64.sqrt(), 1e-12), "{w}");
        let w2 = weighted_median_price(&Distribution::uniform(0.0, 2.0).unwrap()).unwrap();
        assert!(close(w2, 2f64.sqrt(), 1e-12), "{w2}");
        let atom = weighted_median_price(&Distribution::point_mass(3.0).unwrap()).unwrap();
        assert_eq!(atom, 3.0);
        assert!(weighted_median_price(&Distribution::point_mass(0.0).unwrap()).is_err());
    }

    #[test]
    fn weighted_median_balances_on_atoms() {
        let d = Distribution::discrete(&[(1.0, 0.5), (2.0, 0.25), (4.0, 0.25)]).unwrap();
        let w = weighted_median_price(&d).unwrap();
        let half = 0.5 * d.mean();
        assert!(d.partial_expectation_above_strict(w) <= half);
        assert!(d.partial_expectation_above(w) >= half);
        assert_eq!(w, 2.0);
    }

    #[test]
    fn weighted_median_on_unbounded_support() {
        // (1 + W) e^{-W} = 1/2 for the unit exponential.
        let w = weighted_median_price(&Distribution::exponential(1.0).unwrap()).unwrap();
        assert!(close((1.0 + w) * (-w).exp(), 0.5, 1e-12));
    }

    #[test]
    fn random_quantile_cdf_examples() {
        assert_eq!(random_quantile_price_cdf(inv_e()).unwrap(), 0.0);
        assert_eq!(random_quantile_price_cdf(1.0).unwrap(), 1.0);
        let v = random_quantile_price_cdf(0.5).unwrap();
        assert!(close(v, 1.0 - 2f64.ln(), 1e-15));
        assert!(random_quantile_price_cdf(0.2).is_err());
        assert!(random_quantile_price_cdf(1.5).is_err());
        // Density 1/x integrates to the CDF.
        let q = crate::quadrature::integrate(|x| 1.0 / x, inv_e(), 0.5, 1e-14);
        assert!(close(q.value, v, 1e-13));
    }

    #[test]
    fn random_quantile_sampling() {
        let m = RandomQuantileMechanism::new(Distribution::uniform(0.0, 1.0).unwrap());
        assert!(close(m.sample_price(0.5), (-0.5f64).exp(), 1e-15));
        assert_eq!(m.sample_price(1.0), 1.0);
        assert!(close(m.sample_price(0.0), inv_e(), 1e-15));
        let tilted = RandomQuantileMechanism::new(Distribution::uniform(2.0, 5.0).unwrap());
        assert_eq!(tilted.sample_price(1.0), 5.0);
    }

    #[test]
    fn literals_parse_and_resolve() {
        let u = Distribution::uniform(0.0, 1.0).unwrap();
        for (text, price) in [
            (r#"{"kind":"fixed","params":{"price":0.3}}"#, Some(0.3)),
            ("median", Some(0.5)),
            ("weighted_median", Some(0.5f64.sqrt())),
            ("random_quantile", None),
            ("buyer_median", Some(0.5)),
        ] {
            let lit: MechanismLiteral = text.parse().unwrap();
            let m = lit.resolve(&u, &u).unwrap();
            match (m.deterministic_price(), price) {
                (Some(a), Some(b)) => assert!(close(a, b, 1e-12), "{text}"),
                (None, None) => {}
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!("auction".parse::<MechanismLiteral>().is_err());
    }
}

//! Adversarial and illustrative instances: the distributions behind the
//! 1/2 barrier for one-sided information, the median-of-buyer failure, and
//! the exponential family where no fixed price approximates gain from
//! trade.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{Component, Distribution};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{evaluate, fixed_price_welfare, optimal_welfare, Objective};
use crate::mechanisms::MechanismLiteral;

/// Finite stand-in for an arbitrarily valuable buyer.
pub const HUGE_VALUE: f64 = 1e6;

/// `epsilon` used by the median-of-buyer scenario when sweeping `t`.
pub const MB_EPSILON: f64 = 0.01;

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("epsilon", format!("must lie in (0, 1), got {eps}")));
    }
    Ok(())
}

/// Seller uniform on `(0, eps)` or `(1, 1 + eps)`, each with probability 1/2.
pub fn prop31_seller_family(eps: f64) -> Result<Distribution> {
    check_epsilon(eps)?;
    Distribution::from_components(&[
        Component::segment(0.0, eps, 0.5),
        Component::segment(1.0, 1.0 + eps, 0.5),
    ])
}

/// Buyer uniform on `(1, 1 + eps)` w.p. 0.99 and on `(100, 100 + eps)`
/// w.p. 0.01.
pub fn prop31_buyer_family(eps: f64) -> Result<Distribution> {
    check_epsilon(eps)?;
    Distribution::from_components(&[
        Component::segment(1.0, 1.0 + eps, 0.99),
        Component::segment(100.0, 100.0 + eps, 0.01),
    ])
}

/// Buyer worth `eps` w.p. `1/2 + eps` and `t` otherwise; seller worth 1.
/// Returns `(buyer, seller)`.
pub fn mb_counterexample(t: f64, eps: f64) -> Result<(Distribution, Distribution)> {
    if !(t > 1.0 && t.is_finite()) {
        return Err(invalid("t", format!("must be finite and > 1, got {t}")));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(invalid(
            "epsilon",
            format!("must lie in (0, 1/2), got {eps}"),
        ));
    }
    let buyer = Distribution::discrete(&[(eps, 0.5 + eps), (t, 0.5 - eps)])?;
    Ok((buyer, Distribution::point_mass(1.0)?))
}

/// Exponential pair on `[0, t]`: seller density `~ e^(x - t)`, buyer
/// density `~ e^-x`. Returns `(seller, buyer)`.
pub fn gft_family(t: f64) -> Result<(Distribution, Distribution)> {
    Ok((Distribution::gft_seller(t)?, Distribution::gft_buyer(t)?))
}

/// Which side of the market the price may depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Seller,
    Buyer,
}

/// A price range and the opponent that defeats every price in it.
#[derive(Debug, Clone)]
pub struct TightnessCase {
    pub label: &'static str,
    /// Representative prices strictly inside the case's range.
    pub prices: Vec<f64>,
    pub seller: Distribution,
    pub buyer: Distribution,
}

impl TightnessCase {
    /// Welfare ratio of each representative price.
    pub fn ratios(&self) -> Vec<(f64, f64)> {
        let opt = optimal_welfare(&self.seller, &self.buyer);
        self.prices
            .iter()
            .map(|&p| (p, fixed_price_welfare(p, &self.seller, &self.buyer) / opt))
            .collect()
    }
}

/// Opponents of a price chosen knowing only the seller family (the first
/// element) or only the buyer family (the second).
pub fn tightness_adversaries(side: Side, eps: f64) -> Result<Vec<Distribution>> {
    check_epsilon(eps)?;
    match side {
        Side::Seller => Ok(vec![
            Distribution::point_mass(HUGE_VALUE)?,
            Distribution::point_mass(1.0 - eps)?,
        ]),
        Side::Buyer => Ok(vec![
            Distribution::point_mass(1.0 + eps)?,
            Distribution::point_mass(0.0)?,
        ]),
    }
}

/// The case split over the posted price `r`, with its opponent.
pub fn tightness_cases(side: Side, eps: f64) -> Result<Vec<TightnessCase>> {
    let adv = tightness_adversaries(side, eps)?;
    match side {
        Side::Seller => {
            let s = prop31_seller_family(eps)?;
            Ok(vec![
                TightnessCase {
                    label: "r <= 1, buyer value huge",
                    prices: vec![0.5 * eps, 0.5, 1.0],
                    seller: s.clone(),
                    buyer: adv[0].clone(),
                },
                TightnessCase {
                    label: "r > 1, buyer value 1 - eps",
                    prices: vec![1.0 + 0.5 * eps, 2.0, 10.0],
                    seller: s,
                    buyer: adv[1].clone(),
                },
            ])
        }
        Side::Buyer => {
            let b = prop31_buyer_family(eps)?;
            Ok(vec![
                TightnessCase {
                    label: "r <= 1 + eps, seller value 1 + eps",
                    prices: vec![0.5, 1.0, 1.0 + 0.5 * eps],
                    seller: adv[0].clone(),
                    buyer: b.clone(),
                },
                TightnessCase {
                    label: "1 + eps < r <= 100 + eps, seller value 0",
                    prices: vec![1.0 + 2.0 * eps, 50.0, 100.0 + 0.5 * eps],
                    seller: adv[1].clone(),
                    buyer: b.clone(),
                },
                TightnessCase {
                    label: "r > 100 + eps, seller value 0",
                    prices: vec![100.0 + 2.0 * eps, 1000.0],
                    seller: adv[1].clone(),
                    buyer: b,
                },
            ])
        }
    }
}

/// Best ratio a price informed only by `side` can guarantee: the worst
/// opponent's ratio at `price`.
pub fn one_sided_ratio(side: Side, eps: f64, price: f64) -> Result<f64> {
    let family = match side {
        Side::Seller => prop31_seller_family(eps)?,
        Side::Buyer => prop31_buyer_family(eps)?,
    };
    let mut worst = f64::INFINITY;
    for adv in tightness_adversaries(side, eps)? {
        let (s, b) = match side {
            Side::Seller => (&family, &adv),
            Side::Buyer => (&adv, &family),
        };
        worst = worst.min(fixed_price_welfare(price, s, b) / optimal_welfare(s, b));
    }
    Ok(worst)
}

/// Named scenario families for sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "prop31s")]
    Prop31Seller,
    #[serde(rename = "prop31b")]
    Prop31Buyer,
    #[serde(rename = "mb")]
    MedianOfBuyer,
    #[serde(rename = "gft")]
    Gft,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Prop31Seller,
        Scenario::Prop31Buyer,
        Scenario::MedianOfBuyer,
        Scenario::Gft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Prop31Seller => "prop31s",
            Scenario::Prop31Buyer => "prop31b",
            Scenario::MedianOfBuyer => "mb",
            Scenario::Gft => "gft",
        }
    }

    pub fn parameter(self) -> &'static str {
        match self {
            Scenario::Prop31Seller | Scenario::Prop31Buyer => "epsilon",
            Scenario::MedianOfBuyer | Scenario::Gft => "t",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::Prop31Seller => {
                "seller split between (0,eps) and (1,1+eps); buyer worth 1e6; seller median price"
            }
            Scenario::Prop31Buyer => {
                "buyer mostly on (1,1+eps), 1% on (100,100+eps); seller worth 0; weighted median price"
            }
            Scenario::MedianOfBuyer => "buyer eps or t, seller worth 1; price at the buyer's median",
            Scenario::Gft => "exponential pair on [0,t]; best fixed price for gain from trade",
        }
    }

    pub fn default_params(self) -> Vec<f64> {
        match self {
            Scenario::Prop31Seller | Scenario::Prop31Buyer => vec![0.1, 0.01, 0.001],
            Scenario::MedianOfBuyer => vec![2.0, 10.0, 100.0, 1000.0],
            Scenario::Gft => vec![5.0, 10.0, 15.0, 20.0],
        }
    }

    pub fn default_mechanism(self) -> MechanismLiteral {
        match self {
            Scenario::Prop31Seller => MechanismLiteral::Median,
            Scenario::Prop31Buyer => MechanismLiteral::WeightedMedian,
            Scenario::MedianOfBuyer => MechanismLiteral::BuyerMedian,
            Scenario::Gft => MechanismLiteral::BestFixed {
                objective: Objective::Gft,
            },
        }
    }

    /// Quantity the sweep reports.
    pub fn objective(self) -> Objective {
        match self {
            Scenario::Gft => Objective::Gft,
            _ => Objective::Welfare,
        }
    }

    /// `(seller, buyer)` at the given parameter.
    pub fn instance(self, param: f64) -> Result<(Distribution, Distribution)> {
        match self {
            Scenario::Prop31Seller => Ok((
                prop31_seller_family(param)?,
                Distribution::point_mass(HUGE_VALUE)?,
            )),
            Scenario::Prop31Buyer => {
                Ok((Distribution::point_mass(0.0)?, prop31_buyer_family(param)?))
            }
            Scenario::MedianOfBuyer => {
                let (buyer, seller) = mb_counterexample(param, MB_EPSILON)?;
                Ok((seller, buyer))
            }
            Scenario::Gft => gft_family(param),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Malformed(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub mech_value: f64,
    pub opt_value: f64,
    pub ratio: f64,
}

impl SweepRow {
    pub const CSV_COLUMNS: [&'static str; 4] = ["param", "mech_value", "opt_value", "ratio"];
}

/// One row per parameter, sorted by parameter. Values are welfare, or gain
/// from trade for the `gft` family.
pub fn sweep(
    scenario: Scenario,
    params: &[f64],
    mechanism: &MechanismLiteral,
    tol: f64,
) -> Result<Vec<SweepRow>> {
    let mut params = params.to_vec();
    params.sort_by(f64::total_cmp);
    params
        .into_iter()
        .map(|param| {
            let (seller, buyer) = scenario.instance(param)?;
            let posted = mechanism.resolve(&seller, &buyer)?;
            let r = evaluate(mechanism.name(), &posted, &seller, &buyer, tol);
            Ok(match scenario.objective() {
                Objective::Welfare => SweepRow {
                    param,
                    mech_value: r.mech_welfare,
                    opt_value: r.opt_welfare,
                    ratio: r.ratio,
                },
                Objective::Gft => SweepRow {
                    param,
                    mech_value: r.mech_gft,
                    opt_value: r.opt_gft,
                    ratio: r.gft_ratio,
                },
            })
        })
        .collect()
}

/// Discrete distribution with `size` distinct values on a 1/20 grid of
/// `[0, 1]` and random weights.
pub fn random_discrete<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Result<Distribution> {
    let mut values: Vec<u32> = Vec::with_capacity(size);
    while values.len() < size.min(21) {
        let v = rng.gen_range(0..=20);
        if !values.contains(&v) {
            values.push(v);
        }
    }
    let weights: Vec<f64> = values.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let points: Vec<(f64, f64)> = values
        .iter()
        .zip(&weights)
        .map(|(&v, w)| (f64::from(v) / 20.0, w / total))
        .collect();
    Distribution::discrete(&points)
}

/// Random shares summing to one.
pub fn random_shares<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut shares: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let head: f64 = shares[..n - 1].iter().sum();
    shares[n - 1] = 1.0 - head;
    shares
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{exponential_lambda, optimal_gft};
    use crate::mechanisms::median_price;

    #[test]
    fn seller_family_shape() {
        let eps = 1e-3;
        let s = prop31_seller_family(eps).unwrap();
        assert!((s.cdf(eps) - 0.5).abs() < 1e-15);
        assert_eq!(s.cdf(1.0 + eps), 1.0);
        assert_eq!(median_price(&s), 1.0);
        assert!(prop31_seller_family(0.0).is_err());
        assert!(prop31_seller_family(1.0).is_err());
    }

    #[test]
    fn buyer_family_shape() {
        let eps = 1e-3;
        let b = prop31_buyer_family(eps).unwrap();
        let expected = 0.99 * (1.0 + eps / 2.0) + 0.01 * (100.0 + eps / 2.0);
        assert!((b.mean() - expected).abs() < 1e-12);
        assert!((b.cdf(50.0) - 0.99).abs() < 1e-15);
        assert_eq!(b.cdf(100.0 + eps), 1.0);
    }

    #[test]
    fn buyer_median_never_trades() {
        let (eps, t) = (0.01, 100.0);
        let (buyer, seller) = mb_counterexample(t, eps).unwrap();
        let p = median_price(&buyer);
        assert_eq!(p, eps);
        assert_eq!(fixed_price_welfare(p, &seller, &buyer), 1.0);
        let opt = optimal_welfare(&seller, &buyer);
        assert!((opt - ((0.5 - eps) * t + (0.5 + eps))).abs() < 1e-12);
        assert!(mb_counterexample(1.0, eps).is_err());
        assert!(mb_counterexample(2.0, 0.5).is_err());
    }

    #[test]
    fn gft_family_constants() {
        let (s, b) = gft_family(10.0).unwrap();
        assert!((exponential_lambda(10.0).unwrap() - 1.0000454).abs() < 1e-7);
        assert_eq!(b.cdf(10.0), 1.0);
        assert_eq!(s.cdf(10.0), 1.0);
        let t = 20.0;
        let (s, b) = gft_family(t).unwrap();
        let l = exponential_lambda(t).unwrap();
        let exact = l * l * (18.0 * (-t).exp() + 22.0 * (-2.0 * t).exp());
        assert!((optimal_gft(&s, &b) - exact).abs() <= 1e-12 * exact);
        assert!(gft_family(0.0).is_err());
    }

    #[test]
    fn tightness_cases_reach_one_half() {
        for side in [Side::Seller, Side::Buyer] {
            for case in tightness_cases(side, 1e-3).unwrap() {
                for (p, r) in case.ratios() {
                    assert!(r <= 0.51, "{side:?} {} p={p}: {r}", case.label);
                }
            }
        }
    }

    #[test]
    fn sweep_is_sorted_and_tends_to_half() {
        let rows = sweep(
            Scenario::Prop31Seller,
            &[0.001, 0.1, 0.01],
            &Scenario::Prop31Seller.default_mechanism(),
            1e-7,
        )
        .unwrap();
        assert_eq!(
            rows.iter().map(|r| r.param).collect::<Vec<_>>(),
            vec![0.001, 0.01, 0.1]
        );
        assert!((rows[0].ratio - 0.5).abs() < 1e-3);
        assert!(sweep(Scenario::Gft, &[], &MechanismLiteral::Median, 1e-7)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn scenario_names_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.name().parse::<Scenario>().unwrap(), sc);
            let (s, b) = sc.instance(sc.default_params()[0]).unwrap();
            assert!((s.total_mass() - 1.0).abs() < 1e-12 && (b.total_mass() - 1.0).abs() < 1e-12);
        }
        assert!("nope".parse::<Scenario>().is_err());
    }
}

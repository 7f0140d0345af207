//! Exhaustive certification of truthfulness, individual rationality and
//! budget balance on finite type spaces.

use serde::{Deserialize, Serialize};

use crate::distributions::Distribution;
use crate::error::{invalid, Error, Result};
use crate::mechanisms::MechanismLiteral;
use crate::reductions::{
    ConvexReduction, DivisibleValuation, MonotoneReduction, PartnershipInstance,
    PartnershipMechanism, ReductionOutcome,
};

/// Largest number of type profiles `certify` will enumerate.
pub const PROFILE_LIMIT: f64 = 1e7;

/// Slack for floating-point noise when comparing utilities.
pub const MARGIN: f64 = 1e-12;

/// A mechanism with finitely many types per player, queried by type index.
pub trait DirectMechanism {
    fn players(&self) -> usize;
    fn type_count(&self, player: usize) -> usize;
    /// Runs the mechanism on reported type indices.
    fn run(&self, profile: &[usize]) -> ReductionOutcome;
    /// Value to `player` of type `ty` for holding `share` of the good.
    fn value(&self, player: usize, ty: usize, share: f64) -> f64;
    /// Initial share held by `player`.
    fn endowment(&self, player: usize) -> f64;

    fn type_label(&self, player: usize, ty: usize) -> String {
        let _ = player;
        ty.to_string()
    }

    /// Quasilinear utility of `player` with true type `ty`.
    fn utility(&self, player: usize, ty: usize, out: &ReductionOutcome) -> f64 {
        self.value(player, ty, out.final_shares[player]) + out.net_transfers[player]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Dsic,
    Ir,
    Bb,
}

/// A profile on which a property fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub property: Property,
    /// True type indices.
    pub profile: Vec<usize>,
    pub labels: Vec<String>,
    pub player: Option<usize>,
    /// Profitable misreport, for truthfulness failures.
    pub misreport: Option<usize>,
    /// Utility gain of the misreport, shortfall below the endowment value,
    /// or budget surplus, depending on the property.
    pub amount: f64,
}

impl Violation {
    /// Re-runs the mechanism on the witness and reports whether the
    /// violation reproduces.
    pub fn replay(&self, game: &dyn DirectMechanism) -> bool {
        let truthful = game.run(&self.profile);
        match self.property {
            Property::Bb => bb_surplus(&truthful).abs() > bb_margin(&truthful),
            Property::Ir => {
                let i = self.player.expect("ir witness names a player");
                ir_shortfall(game, i, self.profile[i], &truthful) > MARGIN
            }
            Property::Dsic => {
                let i = self.player.expect("dsic witness names a player");
                let lie = self.misreport.expect("dsic witness names a misreport");
                let mut reported = self.profile.clone();
                reported[i] = lie;
                let ty = self.profile[i];
                let gain =
                    game.utility(i, ty, &game.run(&reported)) - game.utility(i, ty, &truthful);
                gain > dsic_margin(game.utility(i, ty, &truthful))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Violation>,
}

impl Check {
    fn pass() -> Self {
        Self {
            passed: true,
            witness: None,
        }
    }

    fn record(&mut self, v: Violation) {
        if self.passed {
            self.passed = false;
            self.witness = Some(v);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub dsic: Check,
    pub ir: Check,
    pub bb: Check,
    /// Largest utility gain from any unilateral misreport (0 when truthful
    /// is always optimal).
    pub max_regret: f64,
    pub profiles: u64,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.dsic.passed && self.ir.passed && self.bb.passed
    }

    pub fn witnesses(&self) -> impl Iterator<Item = &Violation> {
        [&self.dsic, &self.ir, &self.bb]
            .into_iter()
            .filter_map(|c| c.witness.as_ref())
    }
}

fn bb_surplus(out: &ReductionOutcome) -> f64 {
    out.budget_imbalance()
}

fn bb_margin(out: &ReductionOutcome) -> f64 {
    let volume: f64 = out.payments.iter().map(|t| t.amount.abs()).sum();
    MARGIN * volume.max(1.0)
}

fn dsic_margin(reference: f64) -> f64 {
    MARGIN * reference.abs().max(1.0)
}

fn ir_shortfall(game: &dyn DirectMechanism, i: usize, ty: usize, out: &ReductionOutcome) -> f64 {
    game.value(i, ty, game.endowment(i)) - game.utility(i, ty, out)
}

/// Number of type profiles of `game`.
pub fn profile_count(game: &dyn DirectMechanism) -> f64 {
    (0..game.players())
        .map(|i| game.type_count(i) as f64)
        .product()
}

/// Enumerates every true profile and every unilateral misreport.
pub fn certify(game: &dyn DirectMechanism) -> Result<Certificate> {
    let n = game.players();
    if n == 0 || (0..n).any(|i| game.type_count(i) == 0) {
        return Err(Error::Empty { what: "type space" });
    }
    let count = profile_count(game);
    if count > PROFILE_LIMIT {
        return Err(Error::InstanceTooLarge {
            profiles: count,
            limit: PROFILE_LIMIT,
        });
    }
    let mut cert = Certificate {
        dsic: Check::pass(),
        ir: Check::pass(),
        bb: Check::pass(),
        max_regret: 0.0,
        profiles: 0,
    };
    let labels = |profile: &[usize]| -> Vec<String> {
        profile
            .iter()
            .enumerate()
            .map(|(i, &t)| game.type_label(i, t))
            .collect()
    };
    let mut profile = vec![0usize; n];
    loop {
        cert.profiles += 1;
        let truthful = game.run(&profile);
        let surplus = bb_surplus(&truthful);
        if surplus.abs() > bb_margin(&truthful) {
            cert.bb.record(Violation {
                property: Property::Bb,
                profile: profile.clone(),
                labels: labels(&profile),
                player: None,
                misreport: None,
                amount: surplus,
            });
        }
        for i in 0..n {
            let ty = profile[i];
            let shortfall = ir_shortfall(game, i, ty, &truthful);
            if shortfall > MARGIN {
                cert.ir.record(Violation {
                    property: Property::Ir,
                    profile: profile.clone(),
                    labels: labels(&profile),
                    player: Some(i),
                    misreport: None,
                    amount: shortfall,
                });
            }
            let honest = game.utility(i, ty, &truthful);
            let mut reported = profile.clone();
            for lie in (0..game.type_count(i)).filter(|&t| t != ty) {
                reported[i] = lie;
                let gain = game.utility(i, ty, &game.run(&reported)) - honest;
                cert.max_regret = cert.max_regret.max(gain);
                if gain > dsic_margin(honest) {
                    cert.dsic.record(Violation {
                        property: Property::Dsic,
                        profile: profile.clone(),
                        labels: labels(&profile),
                        player: Some(i),
                        misreport: Some(lie),
                        amount: gain,
                    });
                }
            }
        }
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(cert);
            }
            k -= 1;
            profile[k] += 1;
            if profile[k] < game.type_count(k) {
                break;
            }
            profile[k] = 0;
        }
    }
}

/// Finite value spaces, one per player; each value is the player's worth
/// for the whole good.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInstance {
    pub type_spaces: Vec<Vec<f64>>,
}

impl DiscreteInstance {
    pub fn new(type_spaces: Vec<Vec<f64>>) -> Result<Self> {
        if type_spaces.iter().any(Vec::is_empty) || type_spaces.is_empty() {
            return Err(Error::Empty { what: "type space" });
        }
        if let Some(v) = type_spaces
            .iter()
            .flatten()
            .find(|v| !(v.is_finite() && **v >= 0.0))
        {
            return Err(invalid(
                "type_spaces",
                format!("value {v} must be finite and >= 0"),
            ));
        }
        Ok(Self { type_spaces })
    }

    /// `players` copies of the same value list.
    pub fn grid(players: usize, values: &[f64]) -> Result<Self> {
        Self::new(vec![values.to_vec(); players])
    }

    /// The standard grid `{0, 1/4, 1/2, 3/4, 1}` for each player.
    pub fn standard(players: usize) -> Self {
        Self::grid(players, &[0.0, 0.25, 0.5, 0.75, 1.0]).expect("valid grid")
    }

    pub fn players(&self) -> usize {
        self.type_spaces.len()
    }

    /// Each player's values as an equally likely prior.
    pub fn priors(&self) -> Result<Vec<Distribution>> {
        self.type_spaces
            .iter()
            .map(|t| Distribution::uniform_over(t))
            .collect()
    }

    fn reports(&self, profile: &[usize]) -> Vec<f64> {
        profile
            .iter()
            .enumerate()
            .map(|(i, &t)| self.type_spaces[i][t])
            .collect()
    }

    fn check_players(&self, n: usize) -> Result<()> {
        if self.players() != n {
            return Err(invalid(
                "type_spaces",
                format!("need {n} players, got {}", self.players()),
            ));
        }
        Ok(())
    }
}

/// Bilateral posted price; player 0 sells, player 1 buys.
#[derive(Debug, Clone)]
pub struct BilateralGame {
    instance: DiscreteInstance,
    price: f64,
}

impl BilateralGame {
    pub fn new(instance: DiscreteInstance, price: f64) -> Result<Self> {
        instance.check_players(2)?;
        crate::mechanisms::FixedPriceMechanism::new(price)?;
        Ok(Self { instance, price })
    }

    /// Resolves `rule` on uniform priors over the type spaces and fixes
    /// the price draw at `u`.
    pub fn from_rule(instance: DiscreteInstance, rule: &MechanismLiteral, u: f64) -> Result<Self> {
        instance.check_players(2)?;
        let priors = instance.priors()?;
        let price = rule.resolve(&priors[0], &priors[1])?.price_for_draw(u);
        Self::new(instance, price)
    }

    pub fn price(&self) -> f64 {
        self.price
    }
}

impl DirectMechanism for BilateralGame {
    fn players(&self) -> usize {
        2
    }
    fn type_count(&self, player: usize) -> usize {
        self.instance.type_spaces[player].len()
    }
    fn run(&self, profile: &[usize]) -> ReductionOutcome {
        let r = self.instance.reports(profile);
        ReductionOutcome::from_bilateral(&crate::mechanisms::fixed_price_outcome(
            self.price, r[0], r[1],
        ))
    }
    fn value(&self, player: usize, ty: usize, share: f64) -> f64 {
        self.instance.type_spaces[player][ty] * share
    }
    fn endowment(&self, player: usize) -> f64 {
        if player == 0 {
            1.0
        } else {
            0.0
        }
    }
    fn type_label(&self, player: usize, ty: usize) -> String {
        self.instance.type_spaces[player][ty].to_string()
    }
}

/// Deliberately broken posted price: trades when `s <= p <= b` but the
/// buyer pays their own bid. Budget balanced and individually rational,
/// but a buyer gains by shading the bid down to `p`.
#[derive(Debug, Clone)]
pub struct BrokenFirstPrice {
    inner: BilateralGame,
}

impl BrokenFirstPrice {
    pub fn new(instance: DiscreteInstance, price: f64) -> Result<Self> {
        Ok(Self {
            inner: BilateralGame::new(instance, price)?,
        })
    }
}

impl DirectMechanism for BrokenFirstPrice {
    fn players(&self) -> usize {
        2
    }
    fn type_count(&self, player: usize) -> usize {
        self.inner.type_count(player)
    }
    fn run(&self, profile: &[usize]) -> ReductionOutcome {
        let r = self.inner.instance.reports(profile);
        let (s, b) = (r[0], r[1]);
        let o = if s <= self.inner.price && b >= self.inner.price {
            crate::mechanisms::Outcome::trade_at(b)
        } else {
            crate::mechanisms::Outcome::no_trade()
        };
        ReductionOutcome::from_bilateral(&o)
    }
    fn value(&self, player: usize, ty: usize, share: f64) -> f64 {
        self.inner.value(player, ty, share)
    }
    fn endowment(&self, player: usize) -> f64 {
        self.inner.endowment(player)
    }
    fn type_label(&self, player: usize, ty: usize) -> String {
        self.inner.type_label(player, ty)
    }
}

/// Partnership dissolving with frozen round prices.
#[derive(Debug, Clone)]
pub struct PartnershipGame {
    instance: DiscreteInstance,
    shares: Vec<f64>,
    prices: Vec<f64>,
}

impl PartnershipGame {
    pub fn new(instance: DiscreteInstance, shares: Vec<f64>, prices: Vec<f64>) -> Result<Self> {
        instance.check_players(shares.len())?;
        // Validates shares and price count.
        crate::reductions::dissolve_partnership(&shares, &prices, &vec![0.0; shares.len()])?;
        Ok(Self {
            instance,
            shares,
            prices,
        })
    }

    /// Prices come from `rule` run on uniform priors over the type spaces.
    pub fn from_rule(
        instance: DiscreteInstance,
        shares: Vec<f64>,
        rule: &MechanismLiteral,
        u: f64,
    ) -> Result<Self> {
        let inst = PartnershipInstance::new(shares.clone(), instance.priors()?)?;
        let prices = PartnershipMechanism::new(inst, rule)?.prices(u);
        Self::new(instance, shares, prices)
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }
}

impl DirectMechanism for PartnershipGame {
    fn players(&self) -> usize {
        self.shares.len()
    }
    fn type_count(&self, player: usize) -> usize {
        self.instance.type_spaces[player].len()
    }
    fn run(&self, profile: &[usize]) -> ReductionOutcome {
        crate::reductions::dissolve_partnership(
            &self.shares,
            &self.prices,
            &self.instance.reports(profile),
        )
        .expect("validated instance")
    }
    fn value(&self, player: usize, ty: usize, share: f64) -> f64 {
        self.instance.type_spaces[player][ty] * share
    }
    fn endowment(&self, player: usize) -> f64 {
        self.shares[player]
    }
    fn type_label(&self, player: usize, ty: usize) -> String {
        self.instance.type_spaces[player][ty].to_string()
    }
}

fn valuation_label(v: &DivisibleValuation) -> String {
    let pts: Vec<String> = v
        .points()
        .iter()
        .map(|(x, y)| format!("({x},{y})"))
        .collect();
    pts.join(" ")
}

/// The monotone divisible-good reduction with a frozen price draw; the
/// types are the prior's valuations.
#[derive(Debug, Clone)]
pub struct MonotoneGame {
    types: [Vec<DivisibleValuation>; 2],
    reduction: MonotoneReduction,
    u: f64,
}

impl MonotoneGame {
    pub fn new(reduction: MonotoneReduction, u: f64) -> Self {
        let types = [
            reduction.seller().valuations().cloned().collect(),
            reduction.buyer().valuations().cloned().collect(),
        ];
        Self {
            types,
            reduction,
            u,
        }
    }
}

impl DirectMechanism for MonotoneGame {
    fn players(&self) -> usize {
        2
    }
    fn type_count(&self, player: usize) -> usize {
        self.types[player].len()
    }
    fn run(&self, profile: &[usize]) -> ReductionOutcome {
        self.reduction.run(
            &self.types[0][profile[0]],
            &self.types[1][profile[1]],
            self.u,
        )
    }
    fn value(&self, player: usize, ty: usize, share: f64) -> f64 {
        self.types[player][ty].value(share)
    }
    fn endowment(&self, player: usize) -> f64 {
        if player == 0 {
            1.0
        } else {
            0.0
        }
    }
    fn type_label(&self, player: usize, ty: usize) -> String {
        valuation_label(&self.types[player][ty])
    }
}

/// The concave-valuation reduction with a frozen price draw.
#[derive(Debug, Clone)]
pub struct ConvexGame {
    types: [Vec<DivisibleValuation>; 2],
    reduction: ConvexReduction,
    u: f64,
}

impl ConvexGame {
    pub fn new(reduction: ConvexReduction, u: f64) -> Self {
        let types = [
            reduction.priors()[0].valuations().cloned().collect(),
            reduction.priors()[1].valuations().cloned().collect(),
        ];
        Self {
            types,
            reduction,
            u,
        }
    }
}

impl DirectMechanism for ConvexGame {
    fn players(&self) -> usize {
        2
    }
    fn type_count(&self, player: usize) -> usize {
        self.types[player].len()
    }
    fn run(&self, profile: &[usize]) -> ReductionOutcome {
        self.reduction.run(
            [&self.types[0][profile[0]], &self.types[1][profile[1]]],
            self.u,
        )
    }
    fn value(&self, player: usize, ty: usize, share: f64) -> f64 {
        self.types[player][ty].value(share)
    }
    fn endowment(&self, player: usize) -> f64 {
        self.reduction.shares()[player]
    }
    fn type_label(&self, player: usize, ty: usize) -> String {
        valuation_label(&self.types[player][ty])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reductions::ValuationPrior;

    #[test]
    fn fixed_price_certifies_with_zero_regret() {
        for &p in &[0.0, 0.3, 0.5, 1.0] {
            let g = BilateralGame::new(DiscreteInstance::standard(2), p).unwrap();
            let c = certify(&g).unwrap();
            assert!(c.passed(), "{c:?}");
            assert_eq!(c.max_regret, 0.0);
            assert_eq!(c.profiles, 25);
        }
    }

    #[test]
    fn first_price_variant_is_caught() {
        let g = BrokenFirstPrice::new(DiscreteInstance::standard(2), 0.5).unwrap();
        let c = certify(&g).unwrap();
        assert!(!c.dsic.passed);
        assert!(c.ir.passed && c.bb.passed);
        let w = c.dsic.witness.as_ref().unwrap();
        assert_eq!(w.player, Some(1));
        assert!(w.replay(&g));
        assert!(c.max_regret >= 0.25);
        // The textbook deviation: the buyer worth 0.75 bids the price.
        let honest = [0, 3];
        let truthful = g.run(&honest);
        let shaded = g.run(&[0, 2]);
        assert!(g.utility(1, 3, &shaded) > g.utility(1, 3, &truthful));
    }

    #[test]
    fn partnership_certifies_on_three_by_four() {
        let inst = DiscreteInstance::grid(3, &[0.0, 0.3, 0.6, 1.0]).unwrap();
        for rule in [MechanismLiteral::Median, MechanismLiteral::WeightedMedian] {
            let g =
                PartnershipGame::from_rule(inst.clone(), vec![0.5, 0.3, 0.2], &rule, 0.5).unwrap();
            let c = certify(&g).unwrap();
            assert!(c.passed(), "{rule:?}: {c:?}");
        }
    }

    #[test]
    fn oversized_instances_are_refused() {
        let g = PartnershipGame::new(
            DiscreteInstance::grid(8, &(0..10).map(f64::from).collect::<Vec<_>>()).unwrap(),
            vec![0.125; 8],
            vec![1.0; 8],
        )
        .unwrap();
        assert!(matches!(certify(&g), Err(Error::InstanceTooLarge { .. })));
    }

    #[test]
    fn convex_reduction_with_interior_shares_is_not_ir() {
        let lin = |v| DivisibleValuation::linear(v).unwrap();
        let priors = [
            ValuationPrior::uniform(vec![lin(0.2), lin(0.9)]).unwrap(),
            ValuationPrior::uniform(vec![lin(0.5), lin(1.0)]).unwrap(),
        ];
        let r = ConvexReduction::new([0.6, 0.4], priors, &MechanismLiteral::Median, 0.5).unwrap();
        let g = ConvexGame::new(r, 0.5);
        let c = certify(&g).unwrap();
        assert!(c.dsic.passed && c.bb.passed);
        assert!(!c.ir.passed);
        let w = c.ir.witness.as_ref().unwrap();
        assert_eq!(w.player, Some(1));
        assert!(w.replay(&g));
    }
}

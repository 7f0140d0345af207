//! Black-box constructions that turn a bilateral posted-price rule into
//! mechanisms for richer markets: partnership dissolving among `n` owners,
//! and two-player trade of a divisible good.

use serde::{Deserialize, Serialize};

use crate::distributions::{max_of, Distribution};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{fixed_price_welfare, mechanism_welfare, optimal_welfare};
use crate::mechanisms::{MechanismLiteral, Outcome, PostedPrice};

const SHARE_TOLERANCE: f64 = 1e-12;

/// A payment of `amount` from one player to another.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: usize,
    pub to: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionOutcome {
    pub final_shares: Vec<f64>,
    /// Money received minus money paid, per player.
    pub net_transfers: Vec<f64>,
    pub payments: Vec<Transfer>,
}

impl ReductionOutcome {
    pub fn unchanged(shares: &[f64]) -> Self {
        Self {
            final_shares: shares.to_vec(),
            net_transfers: vec![0.0; shares.len()],
            payments: Vec::new(),
        }
    }

    /// Bilateral outcome with the seller as player 0 and the buyer as 1.
    pub fn from_bilateral(o: &Outcome) -> Self {
        let mut out = Self::unchanged(&[1.0, 0.0]);
        if o.traded {
            out.move_share(0, 1, o.allocation);
            out.pay(1, 0, o.buyer_payment_made);
        }
        out
    }

    fn move_share(&mut self, from: usize, to: usize, amount: f64) {
        self.final_shares[from] -= amount;
        self.final_shares[to] += amount;
    }

    fn pay(&mut self, from: usize, to: usize, amount: f64) {
        self.net_transfers[from] -= amount;
        self.net_transfers[to] += amount;
        self.payments.push(Transfer { from, to, amount });
    }

    /// `sum_i net_transfers[i]`; zero up to rounding for every outcome built
    /// here.
    pub fn budget_imbalance(&self) -> f64 {
        self.net_transfers.iter().sum()
    }
}

fn check_shares(shares: &[f64]) -> Result<()> {
    if shares.len() < 2 {
        return Err(invalid(
            "shares",
            format!("need at least 2 players, got {}", shares.len()),
        ));
    }
    if let Some(r) = shares.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(invalid(
            "shares",
            format!("share {r} is negative or not finite"),
        ));
    }
    let total: f64 = shares.iter().sum();
    if (total - 1.0).abs() > SHARE_TOLERANCE {
        return Err(invalid(
            "shares",
            format!("shares sum to {total}, expected 1"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PartnershipInstance {
    shares: Vec<f64>,
    values: Vec<Distribution>,
}

impl PartnershipInstance {
    /// `values[i]` is the distribution of player `i`'s value for the whole
    /// asset.
    pub fn new(shares: Vec<f64>, values: Vec<Distribution>) -> Result<Self> {
        check_shares(&shares)?;
        if values.len() != shares.len() {
            return Err(invalid(
                "values",
                format!(
                    "{} distributions for {} players",
                    values.len(),
                    shares.len()
                ),
            ));
        }
        Ok(Self { shares, values })
    }

    pub fn n(&self) -> usize {
        self.shares.len()
    }

    pub fn shares(&self) -> &[f64] {
        &self.shares
    }

    pub fn values(&self) -> &[Distribution] {
        &self.values
    }

    pub fn r_max(&self) -> f64 {
        self.shares.iter().copied().fold(0.0, f64::max)
    }

    /// Distribution of `max_{k != i} v_k`.
    pub fn rival_max(&self, i: usize) -> Distribution {
        let others: Vec<Distribution> = self
            .values
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, d)| d.clone())
            .collect();
        max_of(&others).expect("at least one rival")
    }

    /// `E[max_k v_k]`, the first-best welfare.
    pub fn optimal_welfare(&self) -> f64 {
        max_of(&self.values).expect("nonempty").mean()
    }
}

fn check_reports(n: usize, reports: &[f64]) -> Result<()> {
    if reports.len() != n {
        return Err(invalid(
            "reports",
            format!("{} reports for {n} players", reports.len()),
        ));
    }
    if let Some(v) = reports.iter().find(|v| !v.is_finite()) {
        return Err(invalid("reports", format!("report {v} is not finite")));
    }
    Ok(())
}

/// One round where only player `i` may sell their share: the highest
/// other bidder `j` (lowest index on ties) buys at `max{price, m2}`, `m2`
/// being the best remaining bid (0 if none), provided `v_i <= p* <= v_j`.
/// Values and payments scale with the lot `shares[i]`.
pub fn single_seller_round(
    i: usize,
    shares: &[f64],
    price: f64,
    reports: &[f64],
) -> Result<ReductionOutcome> {
    check_shares(shares)?;
    check_reports(shares.len(), reports)?;
    if i >= shares.len() {
        return Err(invalid("i", format!("player {i} out of range")));
    }
    let mut out = ReductionOutcome::unchanged(shares);
    play_round(&mut out, i, shares[i], price, reports);
    Ok(out)
}

fn play_round(out: &mut ReductionOutcome, i: usize, lot: f64, price: f64, reports: &[f64]) {
    let mut j: Option<usize> = None;
    for k in (0..reports.len()).filter(|&k| k != i) {
        if j.is_none_or(|j| reports[k] > reports[j]) {
            j = Some(k);
        }
    }
    let j = j.expect("at least two players");
    let m2 = (0..reports.len())
        .filter(|&k| k != i && k != j)
        .map(|k| reports[k])
        .fold(0.0, f64::max);
    let p_star = price.max(m2);
    if lot > 0.0 && reports[i] <= p_star && reports[j] >= p_star {
        out.move_share(i, j, lot);
        out.pay(j, i, lot * p_star);
    }
}

/// Runs the single-seller round for every player in ascending index
/// order, each selling only their initial share. `prices[i]` is the
/// bilateral price for player `i`'s round.
pub fn dissolve_partnership(
    shares: &[f64],
    prices: &[f64],
    reports: &[f64],
) -> Result<ReductionOutcome> {
    check_shares(shares)?;
    check_reports(shares.len(), reports)?;
    if prices.len() != shares.len() {
        return Err(invalid(
            "prices",
            format!("{} prices for {} players", prices.len(), shares.len()),
        ));
    }
    let mut out = ReductionOutcome::unchanged(shares);
    for i in 0..shares.len() {
        play_round(&mut out, i, shares[i], prices[i], reports);
    }
    Ok(out)
}

/// Partnership dissolving built from a bilateral rule: in round `i` the
/// rule is run with player `i` as seller against a buyer distributed as
/// the best rival value.
#[derive(Debug, Clone)]
pub struct PartnershipMechanism {
    instance: PartnershipInstance,
    rivals: Vec<Distribution>,
    posted: Vec<PostedPrice>,
}

impl PartnershipMechanism {
    pub fn new(instance: PartnershipInstance, rule: &MechanismLiteral) -> Result<Self> {
        let rivals: Vec<Distribution> = (0..instance.n()).map(|i| instance.rival_max(i)).collect();
        let posted = rivals
            .iter()
            .zip(instance.values())
            .map(|(rival, own)| rule.resolve(own, rival))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            instance,
            rivals,
            posted,
        })
    }

    pub fn instance(&self) -> &PartnershipInstance {
        &self.instance
    }

    /// Round prices for the uniform draw `u`.
    pub fn prices(&self, u: f64) -> Vec<f64> {
        self.posted.iter().map(|p| p.price_for_draw(u)).collect()
    }

    pub fn run(&self, reports: &[f64], u: f64) -> Result<ReductionOutcome> {
        dissolve_partnership(self.instance.shares(), &self.prices(u), reports)
    }

    /// Worst welfare ratio of the underlying bilateral rule over the
    /// rounds, each measured against `E[max_k v_k]`.
    pub fn bilateral_ratio(&self, tol: f64) -> f64 {
        self.posted
            .iter()
            .zip(self.instance.values().iter().zip(&self.rivals))
            .map(|(p, (own, rival))| {
                mechanism_welfare(p, own, rival, tol) / optimal_welfare(own, rival)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Exact expected welfare for the draw `u` when every value
    /// distribution is discrete, by enumerating all value profiles.
    pub fn expected_welfare_discrete(&self, u: f64) -> Result<f64> {
        let supports = self
            .instance
            .values()
            .iter()
            .map(|d| {
                if d.is_discrete() {
                    Ok(d.atoms())
                } else {
                    Err(invalid(
                        "values",
                        "enumeration needs discrete distributions",
                    ))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let prices = self.prices(u);
        let shares = self.instance.shares();
        let mut total = 0.0;
        for_each_profile(&supports, |values, prob| {
            let out = dissolve_partnership(shares, &prices, values).expect("validated instance");
            let w: f64 = values
                .iter()
                .zip(&out.final_shares)
                .map(|(v, r)| v * r)
                .sum();
            total += prob * w;
        });
        Ok(total)
    }
}

/// Calls `f(values, probability)` for every profile in the product of the
/// discrete supports.
fn for_each_profile(supports: &[Vec<(f64, f64)>], mut f: impl FnMut(&[f64], f64)) {
    if supports.iter().any(|s| s.is_empty()) {
        return;
    }
    let n = supports.len();
    let mut idx = vec![0usize; n];
    let mut values = vec![0.0; n];
    loop {
        let mut prob = 1.0;
        for k in 0..n {
            let (v, p) = supports[k][idx[k]];
            values[k] = v;
            prob *= p;
        }
        f(&values, prob);
        let mut k = n;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < supports[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationKind {
    Linear,
    Monotone,
    Concave,
}

/// Piecewise-linear valuation `v: [0, 1] -> value` through the given
/// `(fraction, value)` points, starting at `(0, 0)` and ending at `x = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawValuation", into = "RawValuation")]
pub struct DivisibleValuation {
    kind: ValuationKind,
    points: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValuation {
    kind: ValuationKind,
    points: Vec<(f64, f64)>,
}

impl TryFrom<RawValuation> for DivisibleValuation {
    type Error = Error;

    fn try_from(raw: RawValuation) -> Result<Self> {
        Self::new(raw.kind, raw.points)
    }
}

impl From<DivisibleValuation> for RawValuation {
    fn from(v: DivisibleValuation) -> Self {
        Self {
            kind: v.kind,
            points: v.points,
        }
    }
}

impl DivisibleValuation {
    pub fn new(kind: ValuationKind, points: Vec<(f64, f64)>) -> Result<Self> {
        let bad = |reason: String| Err(invalid("valuation", reason));
        if points.len() < 2 || points[0] != (0.0, 0.0) || points[points.len() - 1].0 != 1.0 {
            return bad("points must start at (0, 0) and end at x = 1".into());
        }
        if points.iter().any(|(x, v)| !x.is_finite() || !v.is_finite()) {
            return bad("points must be finite".into());
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad(format!(
                    "fractions must increase, got {} then {}",
                    w[0].0, w[1].0
                ));
            }
            if w[1].1 < w[0].1 {
                return bad(format!(
                    "value decreases between x = {} and x = {}",
                    w[0].0, w[1].0
                ));
            }
        }
        let slopes: Vec<f64> = points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect();
        match kind {
            ValuationKind::Linear if points.len() != 2 => {
                return bad("a linear valuation has exactly the points (0, 0) and (1, v)".into())
            }
            ValuationKind::Concave => {
                if let Some(w) = slopes
                    .windows(2)
                    .find(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0))
                {
                    return bad(format!(
                        "marginal value increases from {} to {}",
                        w[0], w[1]
                    ));
                }
            }
            _ => {}
        }
        Ok(Self { kind, points })
    }

    /// `v(x) = value * x`.
    pub fn linear(value: f64) -> Result<Self> {
        Self::new(ValuationKind::Linear, vec![(0.0, 0.0), (1.0, value)])
    }

    pub fn kind(&self) -> ValuationKind {
        self.kind
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// `v(x)`, with `x` clamped to `[0, 1]`.
    pub fn value(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let k = self.points.partition_point(|p| p.0 < x);
        if k == 0 {
            return self.points[0].1;
        }
        let (x0, v0) = self.points[k - 1];
        let (x1, v1) = self.points[k];
        if x == x1 {
            return v1;
        }
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }

    /// Value of the whole good.
    pub fn full(&self) -> f64 {
        self.value(1.0)
    }

    /// `v(amount | base) = v(base + amount) - v(base)`.
    pub fn marginal(&self, amount: f64, base: f64) -> f64 {
        self.value(base + amount) - self.value(base)
    }
}

/// Finite prior over a player's valuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuationPrior {
    pub options: Vec<(DivisibleValuation, f64)>,
}

impl ValuationPrior {
    pub fn new(options: Vec<(DivisibleValuation, f64)>) -> Result<Self> {
        if options.is_empty() {
            return Err(Error::Empty {
                what: "valuation prior",
            });
        }
        let total: f64 = options.iter().map(|o| o.1).sum();
        if options.iter().any(|o| !(o.1 >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::NotNormalized { total });
        }
        Ok(Self { options })
    }

    /// Equally likely valuations.
    pub fn uniform(valuations: Vec<DivisibleValuation>) -> Result<Self> {
        let p = 1.0 / valuations.len().max(1) as f64;
        Self::new(valuations.into_iter().map(|v| (v, p)).collect())
    }

    pub fn valuations(&self) -> impl Iterator<Item = &DivisibleValuation> {
        self.options.iter().map(|o| &o.0)
    }

    /// Distribution of `f(v)` for `v` drawn from the prior.
    pub fn induced(&self, f: impl Fn(&DivisibleValuation) -> f64) -> Result<Distribution> {
        let points: Vec<(f64, f64)> = self.options.iter().map(|(v, p)| (f(v), *p)).collect();
        Distribution::discrete(&points)
    }

    pub fn expectation(&self, f: impl Fn(&DivisibleValuation) -> f64) -> f64 {
        self.options.iter().map(|(v, p)| p * f(v)).sum()
    }
}

/// All-or-nothing trade of the whole good at `price`, the seller (player
/// 0) owning it initially: trades iff `b(1) >= price >= s(1)`.
pub fn monotone_divisible_mechanism(
    seller_val: &DivisibleValuation,
    buyer_val: &DivisibleValuation,
    price: f64,
) -> ReductionOutcome {
    let o = crate::mechanisms::fixed_price_outcome(price, seller_val.full(), buyer_val.full());
    ReductionOutcome::from_bilateral(&o)
}

/// Grants `x` to the seller for free and trades the remaining `1 - x` as
/// one lot at `price`: the buyer gets it iff
/// `v_b(1 - x) >= price >= v_s(1 - x | x)`. Otherwise the seller ends with
/// everything.
pub fn convex_divisible_mechanism(
    seller: usize,
    x: f64,
    seller_val: &DivisibleValuation,
    buyer_val: &DivisibleValuation,
    price: f64,
) -> ReductionOutcome {
    let buyer = 1 - seller;
    let s = seller_val.marginal(1.0 - x, x);
    let b = buyer_val.value(1.0 - x);
    let mut shares = [0.0; 2];
    let mut out;
    if s <= price && b >= price {
        shares[seller] = x;
        shares[buyer] = 1.0 - x;
        out = ReductionOutcome::unchanged(&shares);
        out.pay(buyer, seller, price);
    } else {
        shares[seller] = 1.0;
        out = ReductionOutcome::unchanged(&shares);
    }
    out
}

/// `E[max_y v_a(y) + v_b(1 - y)]` over an allocation grid of `steps + 1`
/// points, in expectation over both priors.
pub fn grid_optimal_welfare(a: &ValuationPrior, b: &ValuationPrior, steps: usize) -> f64 {
    let mut total = 0.0;
    for (va, pa) in &a.options {
        for (vb, pb) in &b.options {
            let best = (0..=steps)
                .map(|k| {
                    let y = k as f64 / steps as f64;
                    va.value(y) + vb.value(1.0 - y)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            total += pa * pb * best;
        }
    }
    total
}

/// Two-player divisible good owned by the seller, traded all-or-nothing.
#[derive(Debug, Clone)]
pub struct MonotoneReduction {
    seller: ValuationPrior,
    buyer: ValuationPrior,
    seller_full: Distribution,
    buyer_full: Distribution,
    posted: PostedPrice,
}

impl MonotoneReduction {
    pub fn new(
        seller: ValuationPrior,
        buyer: ValuationPrior,
        rule: &MechanismLiteral,
    ) -> Result<Self> {
        let seller_full = seller.induced(DivisibleValuation::full)?;
        let buyer_full = buyer.induced(DivisibleValuation::full)?;
        let posted = rule.resolve(&seller_full, &buyer_full)?;
        Ok(Self {
            seller,
            buyer,
            seller_full,
            buyer_full,
            posted,
        })
    }

    pub fn seller(&self) -> &ValuationPrior {
        &self.seller
    }

    pub fn buyer(&self) -> &ValuationPrior {
        &self.buyer
    }

    pub fn price(&self, u: f64) -> f64 {
        self.posted.price_for_draw(u)
    }

    pub fn run(
        &self,
        seller_val: &DivisibleValuation,
        buyer_val: &DivisibleValuation,
        u: f64,
    ) -> ReductionOutcome {
        monotone_divisible_mechanism(seller_val, buyer_val, self.price(u))
    }

    /// Expected welfare, averaged over the price draw too.
    pub fn expected_welfare(&self, tol: f64) -> f64 {
        mechanism_welfare(&self.posted, &self.seller_full, &self.buyer_full, tol)
    }

    /// Welfare ratio of the bilateral rule on the whole-good values.
    pub fn bilateral_ratio(&self, tol: f64) -> f64 {
        self.expected_welfare(tol) / optimal_welfare(&self.seller_full, &self.buyer_full)
    }

    pub fn grid_optimum(&self, steps: usize) -> f64 {
        grid_optimal_welfare(&self.seller, &self.buyer, steps)
    }
}

/// Two-player divisible good with arbitrary endowments and concave
/// valuations.
#[derive(Debug, Clone)]
pub struct ConvexReduction {
    shares: [f64; 2],
    priors: [ValuationPrior; 2],
    seller: usize,
    x: f64,
    posted: PostedPrice,
    seller_marginal: Distribution,
    buyer_lot: Distribution,
}

impl ConvexReduction {
    /// `alpha` is the ratio the bilateral rule guarantees; the seller is
    /// granted `x = alpha / (alpha + 1)` and is the lowest-index player
    /// holding at least `x`.
    pub fn new(
        shares: [f64; 2],
        priors: [ValuationPrior; 2],
        rule: &MechanismLiteral,
        alpha: f64,
    ) -> Result<Self> {
        check_shares(&shares)?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1], got {alpha}")));
        }
        if let Some(v) = priors
            .iter()
            .flat_map(|p| p.valuations())
            .find(|v| v.kind() == ValuationKind::Monotone)
        {
            return Err(invalid(
                "valuation",
                format!("needs linear or concave valuations, got {:?}", v.points()),
            ));
        }
        let x = alpha / (alpha + 1.0);
        let seller = shares
            .iter()
            .position(|&r| r >= x - SHARE_TOLERANCE)
            .ok_or(Error::NoEligibleSeller { required: x })?;
        let buyer = 1 - seller;
        let seller_marginal = priors[seller].induced(|v| v.marginal(1.0 - x, x))?;
        let buyer_lot = priors[buyer].induced(|v| v.value(1.0 - x))?;
        let posted = rule.resolve(&seller_marginal, &buyer_lot)?;
        Ok(Self {
            shares,
            priors,
            seller,
            x,
            posted,
            seller_marginal,
            buyer_lot,
        })
    }

    pub fn shares(&self) -> [f64; 2] {
        self.shares
    }

    pub fn priors(&self) -> &[ValuationPrior; 2] {
        &self.priors
    }

    pub fn seller(&self) -> usize {
        self.seller
    }

    pub fn grant(&self) -> f64 {
        self.x
    }

    pub fn price(&self, u: f64) -> f64 {
        self.posted.price_for_draw(u)
    }

    /// `vals[k]` is player `k`'s valuation.
    pub fn run(&self, vals: [&DivisibleValuation; 2], u: f64) -> ReductionOutcome {
        convex_divisible_mechanism(
            self.seller,
            self.x,
            vals[self.seller],
            vals[1 - self.seller],
            self.price(u),
        )
    }

    /// `E[v_s(x)]` plus the bilateral welfare of the remaining lot.
    pub fn expected_welfare(&self, tol: f64) -> f64 {
        self.priors[self.seller].expectation(|v| v.value(self.x))
            + mechanism_welfare(&self.posted, &self.seller_marginal, &self.buyer_lot, tol)
    }

    pub fn grid_optimum(&self, steps: usize) -> f64 {
        grid_optimal_welfare(&self.priors[0], &self.priors[1], steps)
    }
}

/// Welfare ratio of posting `price` to `seller` against `buyer`.
pub fn measured_ratio(price: f64, seller: &Distribution, buyer: &Distribution) -> f64 {
    fixed_price_welfare(price, seller, buyer) / optimal_welfare(seller, buyer)
}

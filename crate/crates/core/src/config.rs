//! JSON run descriptors for evaluations and certification instances.

use serde::{Deserialize, Serialize};

use crate::distributions::{Distribution, DistributionLiteral};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, monte_carlo_welfare, EvalReport};
use crate::mechanisms::MechanismLiteral;
use crate::reductions::{ConvexReduction, DivisibleValuation, MonotoneReduction, ValuationPrior};
use crate::verification::{
    BilateralGame, BrokenFirstPrice, ConvexGame, DirectMechanism, DiscreteInstance, MonotoneGame,
    PartnershipGame, PROFILE_LIMIT,
};

fn default_draw() -> f64 {
    0.5
}

/// ```json
/// {"seller": {"type": "uniform", "params": {"lo": 0, "hi": 1}},
///  "buyer":  {"type": "uniform", "params": {"lo": 0, "hi": 1}},
///  "mechanism": {"kind": "median"},
///  "buyer_grid": [0.25, 0.5, 1.0],
///  "monte_carlo_samples": 100000}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub seller: DistributionLiteral,
    pub buyer: DistributionLiteral,
    pub mechanism: MechanismLiteral,
    /// Extra rows against a buyer fixed at each of these values.
    #[serde(default)]
    pub buyer_grid: Vec<f64>,
    #[serde(default)]
    pub monte_carlo_samples: u64,
}

impl EvalConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Malformed(format!("eval config: {e}")))
    }

    /// First the full buyer distribution, then one report per grid value.
    pub fn run(&self, tol: f64, seed: u64) -> Result<Vec<EvalReport>> {
        let seller = self.seller.build()?;
        let mut buyers = vec![(None, self.buyer.build()?)];
        for &b in &self.buyer_grid {
            buyers.push((Some(b), Distribution::point_mass(b)?));
        }
        buyers
            .into_iter()
            .map(|(value, buyer)| {
                let posted = self.mechanism.resolve(&seller, &buyer)?;
                let mut r = evaluate(self.mechanism.name(), &posted, &seller, &buyer, tol);
                r.buyer_value = value;
                if self.monte_carlo_samples > 0 {
                    r.monte_carlo = Some(monte_carlo_welfare(
                        &posted,
                        &seller,
                        &buyer,
                        self.monte_carlo_samples,
                        seed,
                    ));
                }
                Ok(r)
            })
            .collect()
    }
}

/// A finite instance to certify, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CertifyConfig {
    /// Player 0 sells, player 1 buys.
    Bilateral {
        type_spaces: Vec<Vec<f64>>,
        mechanism: MechanismLiteral,
        #[serde(default = "default_draw")]
        draw: f64,
    },
    BrokenFirstPrice {
        type_spaces: Vec<Vec<f64>>,
        price: f64,
    },
    Partnership {
        type_spaces: Vec<Vec<f64>>,
        shares: Vec<f64>,
        mechanism: MechanismLiteral,
        #[serde(default = "default_draw")]
        draw: f64,
    },
    Monotone {
        seller: Vec<DivisibleValuation>,
        buyer: Vec<DivisibleValuation>,
        mechanism: MechanismLiteral,
        #[serde(default = "default_draw")]
        draw: f64,
    },
    Convex {
        shares: [f64; 2],
        players: [Vec<DivisibleValuation>; 2],
        mechanism: MechanismLiteral,
        /// Defaults to the ratio the mechanism guarantees.
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default = "default_draw")]
        draw: f64,
    },
}

impl CertifyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Malformed(format!("certify instance: {e}")))
    }

    fn type_counts(&self) -> Vec<usize> {
        match self {
            CertifyConfig::Bilateral { type_spaces, .. }
            | CertifyConfig::BrokenFirstPrice { type_spaces, .. }
            | CertifyConfig::Partnership { type_spaces, .. } => {
                type_spaces.iter().map(Vec::len).collect()
            }
            CertifyConfig::Monotone { seller, buyer, .. } => vec![seller.len(), buyer.len()],
            CertifyConfig::Convex { players, .. } => players.iter().map(Vec::len).collect(),
        }
    }

    /// Builds the game, refusing oversized instances before any
    /// precomputation.
    pub fn build(&self) -> Result<Box<dyn DirectMechanism>> {
        let profiles: f64 = self.type_counts().iter().map(|&c| c as f64).product();
        if profiles > PROFILE_LIMIT {
            return Err(Error::InstanceTooLarge {
                profiles,
                limit: PROFILE_LIMIT,
            });
        }
        Ok(match self {
            CertifyConfig::Bilateral {
                type_spaces,
                mechanism,
                draw,
            } => Box::new(BilateralGame::from_rule(
                DiscreteInstance::new(type_spaces.clone())?,
                mechanism,
                *draw,
            )?),
            CertifyConfig::BrokenFirstPrice { type_spaces, price } => Box::new(
                BrokenFirstPrice::new(DiscreteInstance::new(type_spaces.clone())?, *price)?,
            ),
            CertifyConfig::Partnership {
                type_spaces,
                shares,
                mechanism,
                draw,
            } => Box::new(PartnershipGame::from_rule(
                DiscreteInstance::new(type_spaces.clone())?,
                shares.clone(),
                mechanism,
                *draw,
            )?),
            CertifyConfig::Monotone {
                seller,
                buyer,
                mechanism,
                draw,
            } => {
                let r = MonotoneReduction::new(
                    ValuationPrior::uniform(seller.clone())?,
                    ValuationPrior::uniform(buyer.clone())?,
                    mechanism,
                )?;
                Box::new(MonotoneGame::new(r, *draw))
            }
            CertifyConfig::Convex {
                shares,
                players,
                mechanism,
                alpha,
                draw,
            } => {
                let alpha = match alpha.or_else(|| mechanism.guaranteed_ratio()) {
                    Some(a) => a,
                    None => {
                        return Err(Error::Malformed(format!(
                            "convex instance needs `alpha` for mechanism `{}`",
                            mechanism.name()
                        )))
                    }
                };
                let priors = [
                    ValuationPrior::uniform(players[0].clone())?,
                    ValuationPrior::uniform(players[1].clone())?,
                ];
                Box::new(ConvexGame::new(
                    ConvexReduction::new(*shares, priors, mechanism, alpha)?,
                    *draw,
                ))
            }
        })
    }
}

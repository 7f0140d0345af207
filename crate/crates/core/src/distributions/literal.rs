use serde::{Deserialize, Serialize};

use super::{Component, Distribution};
use crate::error::Result;

/// JSON literal for a distribution: `{"type": ..., "params": {...}}`.
///
/// ```json
/// {"type": "uniform", "params": {"lo": 0, "hi": 1}}
/// {"type": "exponential", "params": {"rate": 1}}
/// {"type": "atoms", "params": {"points": [[0.5, 0.25], [1.0, 0.75]]}}
/// {"type": "gft_seller", "params": {"t": 10}}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "type",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum DistributionLiteral {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Exponential {
        rate: f64,
        #[serde(default)]
        lo: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi: Option<f64>,
    },
    /// `(value, probability)` pairs.
    Atoms {
        points: Vec<(f64, f64)>,
    },
    Pieces {
        pieces: Vec<Component>,
    },
    GftSeller {
        t: f64,
    },
    GftBuyer {
        t: f64,
    },
}

impl DistributionLiteral {
    pub fn build(&self) -> Result<Distribution> {
        match self {
            DistributionLiteral::Uniform { lo, hi } => Distribution::uniform(*lo, *hi),
            DistributionLiteral::Exponential { rate, lo, hi } => {
                Distribution::exponential_on(*rate, *lo, hi.unwrap_or(f64::INFINITY))
            }
            DistributionLiteral::Atoms { points } => Distribution::discrete(points),
            DistributionLiteral::Pieces { pieces } => Distribution::from_components(pieces),
            DistributionLiteral::GftSeller { t } => Distribution::gft_seller(*t),
            DistributionLiteral::GftBuyer { t } => Distribution::gft_buyer(*t),
        }
    }
}

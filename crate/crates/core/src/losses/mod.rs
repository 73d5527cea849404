//! Training objectives over chunk embeddings and identity logits.

mod centre;
mod identity;
mod paba;
mod total;

use serde::{Deserialize, Serialize};

pub use centre::cross_centre_loss;
pub use identity::id_loss;
pub use paba::{compute_pseudo_anchors, paba_directional, paba_loss, PseudoAnchorSet};
pub use total::{total_loss, weighted_total, Aggregation, LossTerms};

use crate::error::{Error, Result};

/// Distance used by the aggregation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    /// Weight of the identity loss on modality-specific features.
    pub lambda_specific: f64,
    /// Weight of the cross-modality aggregation term.
    pub lambda_aggregation: f64,
    /// Weight of the summed per-chunk identity losses.
    pub lambda_parts: f64,
    pub distance: Distance,
    /// L2-normalise chunk features before the aggregation term.
    pub normalize_features: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            lambda_specific: 1.0,
            lambda_aggregation: 2.5,
            lambda_parts: 1.0,
            distance: Distance::Euclidean,
            normalize_features: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        for (name, v) in [
            ("lambda_specific", self.lambda_specific),
            ("lambda_aggregation", self.lambda_aggregation),
            ("lambda_parts", self.lambda_parts),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::cosine;

/// Weight on the speaker-embedding term of the conversion loss.
pub const EMBEDDING_LOSS_WEIGHT: f64 = 5.0;

/// Per-term losses of a sequence-to-sequence conversion model, supplied as
/// scalars by whatever produced them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VcLossComponents {
    pub mel_before: f64,
    pub mel_after: f64,
    pub stop_token: f64,
    pub embedding_loss: f64,
    pub regular_loss: f64,
    #[serde(default = "default_weight")]
    pub embedding_weight: f64,
}

fn default_weight() -> f64 {
    EMBEDDING_LOSS_WEIGHT
}

impl VcLossComponents {
    pub fn new(
        mel_before: f64,
        mel_after: f64,
        stop_token: f64,
        embedding_loss: f64,
        regular_loss: f64,
    ) -> Self {
        Self {
            mel_before,
            mel_after,
            stop_token,
            embedding_loss,
            regular_loss,
            embedding_weight: EMBEDDING_LOSS_WEIGHT,
        }
    }
}

/// `mel_before + mel_after + stop_token + w * embedding + regular`.
pub fn vc_total_loss(c: &VcLossComponents) -> Result<f64> {
    let terms = [
        ("mel_before", c.mel_before),
        ("mel_after", c.mel_after),
        ("stop_token", c.stop_token),
        ("embedding_loss", c.embedding_loss),
        ("regular_loss", c.regular_loss),
        ("embedding_weight", c.embedding_weight),
    ];
    if let Some((name, v)) = terms.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("loss component {name} = {v} must be finite and >= 0")));
    }
    Ok(c.mel_before
        + c.mel_after
        + c.stop_token
        + c.embedding_weight * c.embedding_loss
        + c.regular_loss)
}

/// `1 - cos(converted, target)`, in `[0, 2]`.
pub fn embedding_feedback_loss(converted: &[f32], target: &[f32]) -> Result<f64> {
    Ok(1.0 - cosine(converted, target)?)
}

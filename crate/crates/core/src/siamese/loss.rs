use serde::{Deserialize, Serialize};

use super::{PairLabel, SiameseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `D` for positive pairs, `max(0, m - D)` for negative pairs.
    #[default]
    Linear,
    /// `D^2` for positive pairs, `max(0, m - D)^2` for negative pairs.
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin: f64,
    pub kind: LossKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { margin: 1.0, kind: LossKind::Linear }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), SiameseError> {
        if self.margin > 0.0 && self.margin.is_finite() {
            Ok(())
        } else {
            Err(SiameseError::Config(format!("margin must be positive, got {}", self.margin)))
        }
    }
}

/// Contrastive loss of one pair at distance `d`, with its derivative in `d`.
/// The hinge uses subgradient 0 at `d == margin`.
pub fn contrastive_loss(d: f64, label: PairLabel, cfg: &LossConfig) -> (f64, f64) {
    let m = cfg.margin;
    match (label, cfg.kind) {
        (PairLabel::Positive, LossKind::Linear) => (d, 1.0),
        (PairLabel::Positive, LossKind::Squared) => (d * d, 2.0 * d),
        (PairLabel::Negative, _) if d >= m => (0.0, 0.0),
        (PairLabel::Negative, LossKind::Linear) => (m - d, -1.0),
        (PairLabel::Negative, LossKind::Squared) => ((m - d) * (m - d), -2.0 * (m - d)),
    }
}

/// Mean loss over a batch of `(distance, label)` pairs.
pub fn batch_loss(pairs: &[(f64, PairLabel)], cfg: &LossConfig) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(d, l)| contrastive_loss(d, l, cfg).0).sum::<f64>() / pairs.len() as f64
}

/// Euclidean distance between two embeddings.
pub fn distance(a: &[f64], b: &[f64]) -> Result<f64, SiameseError> {
    if a.len() != b.len() {
        return Err(SiameseError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

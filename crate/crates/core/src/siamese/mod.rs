//! Twin-branch signature verification: embedding, contrastive training,
//! threshold calibration and evaluation metrics.

mod loss;
mod metrics;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageproc::{NormalizedSignature, PreprocessError};
use crate::nn::{ModelFormatError, NnError};

pub use loss::{batch_loss, contrastive_loss, distance, LossConfig, LossKind};
pub use metrics::{
    calibrate, calibrate_threshold, candidate_thresholds, equal_error_rate, ConfusionMatrix, EerPoint, ScoredPair,
    VerificationReport,
};
pub use model::{Branch, SiameseModel};
pub use train::{
    history_csv, pair_gradients, pair_loss, score_pairs, train, EarlyStopping, EpochRecord, IndexedPair, PairSet,
    TrainConfig, TrainOutcome, Trainer, HISTORY_HEADER,
};

#[derive(Debug, Error)]
pub enum SiameseError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    ModelFormat(#[from] ModelFormatError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("embeddings differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no pairs to score")]
    EmptyPairs,
    #[error("pairs of both classes are required")]
    SingleClass,
    #[error("no reference signatures")]
    NoReferences,
    #[error("pair refers to index {index} but only {images} entries exist")]
    PairIndex { index: usize, images: usize },
}

/// Ground truth of a signature pair: both genuine from one signer, or a
/// genuine reference against a forgery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Positive,
    Negative,
}

impl PairLabel {
    /// Target as used in the contrastive loss: 0 for positive, 1 for negative.
    pub fn target(self) -> u8 {
        match self {
            PairLabel::Positive => 0,
            PairLabel::Negative => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub distance: f64,
    pub threshold: f64,
    pub accepted: bool,
}

/// Smallest distance from `probe` to any reference embedding.
pub fn min_distance(references: &[Vec<f64>], probe: &[f64]) -> Result<f64, SiameseError> {
    if references.is_empty() {
        return Err(SiameseError::NoReferences);
    }
    let mut best = f64::INFINITY;
    for r in references {
        best = best.min(distance(r, probe)?);
    }
    Ok(best)
}

/// Accepts `probe` iff its nearest enrolled reference lies within `threshold`.
pub fn verify_user(
    model: &SiameseModel,
    references: &[NormalizedSignature],
    probe: &NormalizedSignature,
    threshold: f64,
) -> Result<VerifyOutcome, SiameseError> {
    let refs = references.iter().map(|r| model.embed(r)).collect::<Result<Vec<_>, _>>()?;
    let distance = min_distance(&refs, &model.embed(probe)?)?;
    Ok(VerifyOutcome { distance, threshold, accepted: distance <= threshold })
}

/// Report at a fixed threshold over every pair in `set`.
pub fn evaluate(model: &SiameseModel, set: &PairSet, threshold: f64) -> Result<VerificationReport, SiameseError> {
    VerificationReport::from_scores(&score_pairs(model, set)?, threshold)
}

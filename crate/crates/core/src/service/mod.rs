//! Transport-independent service logic: live capture sessions, trace replay,
//! the enrollment store and enroll/verify against a loaded model.

mod session;
mod store;

use thiserror::Error;

use crate::imageproc::preprocess_to;
use crate::raster::SignatureImage;
use crate::siamese::{min_distance, SiameseError, SiameseModel, VerifyOutcome};

pub use session::{
    replay, CaptureConfig, CaptureError, CapturePipeline, FrameOutcome, Inbound, Outbound, ReplayStats, SessionState,
};
pub use store::{EnrollmentStore, StoreIndex, INDEX_FILE};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("enrollment store: {0}")]
    Store(String),
    #[error("enrollment store was built for model {stored}, current model is {current}")]
    StoreMismatch { stored: String, current: String },
    #[error(transparent)]
    Model(#[from] SiameseError),
}

/// A loaded model with its calibrated threshold.
#[derive(Debug, Clone)]
pub struct Verifier {
    model: SiameseModel,
    threshold: f64,
    model_version: String,
}

impl Verifier {
    pub fn new(model: SiameseModel, threshold: f64) -> Self {
        let model_version = model.model_version();
        Self { model, threshold, model_version }
    }

    pub fn model(&self) -> &SiameseModel {
        &self.model
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn decode(png: &[u8]) -> Result<SignatureImage, ServiceError> {
        SignatureImage::from_png(png).map_err(|e| ServiceError::InvalidImage(e.to_string()))
    }

    pub fn embed(&self, img: &SignatureImage) -> Result<Vec<f64>, ServiceError> {
        let (h, w) = self.model.input_hw();
        let norm = preprocess_to(img, h, w).map_err(|e| ServiceError::InvalidImage(e.to_string()))?;
        Ok(self.model.embed(&norm)?)
    }

    /// Validates the image as a model input and stores it as a reference.
    pub fn enroll(&self, store: &mut EnrollmentStore, user: &str, png: &[u8]) -> Result<String, ServiceError> {
        let img = Self::decode(png)?;
        self.embed(&img)?;
        store.enroll(user, &img)
    }

    /// Nearest-reference decision for `user`.
    pub fn verify(&self, store: &EnrollmentStore, user: &str, png: &[u8]) -> Result<VerifyOutcome, ServiceError> {
        let refs = store.references(user)?;
        let probe = self.embed(&Self::decode(png)?)?;
        let refs = refs.iter().map(|r| self.embed(r)).collect::<Result<Vec<_>, _>>()?;
        let distance = min_distance(&refs, &probe)?;
        Ok(VerifyOutcome { distance, threshold: self.threshold, accepted: distance <= self.threshold })
    }

    /// Decision for two images directly.
    pub fn verify_pair(&self, a: &SignatureImage, b: &SignatureImage) -> Result<VerifyOutcome, ServiceError> {
        let distance = crate::siamese::distance(&self.embed(a)?, &self.embed(b)?)?;
        Ok(VerifyOutcome { distance, threshold: self.threshold, accepted: distance <= self.threshold })
    }
}

//! Air-signature capture and signature verification.
//!
//! The capture side turns a stream of 21-point hand-landmark frames into a
//! signature raster: fingers-up detection drives a debounced posture
//! (`Active` draws, `Stop` lifts the pen, `Erase` clears), and the index
//! fingertip is smoothed and joined into strokes. The verification side
//! preprocesses signature images, embeds them with a twin-branch
//! convolutional network trained with a contrastive loss, and accepts a probe
//! when its distance to an enrolled reference falls under a calibrated
//! threshold.

pub mod dataset;
pub mod imageproc;
pub mod landmark;
pub mod nn;
pub mod raster;
pub mod service;
pub mod siamese;
pub mod stroke;

pub use imageproc::{preprocess, NormalizedSignature};
pub use landmark::{LandmarkFrame, Posture};
pub use raster::SignatureImage;
pub use siamese::{PairLabel, SiameseModel, VerificationReport};
pub use stroke::{SmoothingConfig, StrokeSession};

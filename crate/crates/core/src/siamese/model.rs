use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SiameseError;
use crate::imageproc::NormalizedSignature;
use crate::nn::{self, ModelHeader, Network, Preset, Tensor};

/// Which side of the twin network an evaluation runs on. Both sides share one
/// parameter set, so the distinction exists only at call sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Left,
    Right,
}

/// Twin-branch embedding network with a single shared parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    preset: Preset,
    seed: u64,
    network: Network,
}

impl SiameseModel {
    pub fn new(preset: Preset, seed: u64) -> Result<Self, SiameseError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let network = Network::new(&preset.input_shape(), preset.layers(), &mut rng)?;
        Ok(Self { preset, seed, network })
    }

    pub fn from_parts(preset: Preset, seed: u64, network: Network) -> Result<Self, SiameseError> {
        if network.input_shape() != preset.input_shape() || network.output_shape() != [preset.embedding_dim()] {
            return Err(SiameseError::Shape(format!(
                "network {:?} -> {:?} does not fit preset {preset}",
                network.input_shape(),
                network.output_shape()
            )));
        }
        Ok(Self { preset, seed, network })
    }

    pub fn load(path: &Path) -> Result<(Self, ModelHeader), SiameseError> {
        let (header, network) = nn::load_model(path)?;
        let preset: Preset = header.preset.parse()?;
        Ok((Self::from_parts(preset, header.seed, network)?, header))
    }

    pub fn save(&self, path: &Path) -> Result<ModelHeader, SiameseError> {
        Ok(nn::save_model(path, &self.network, self.preset.name(), self.seed)?)
    }

    /// Version string of the parameters as they would be stored on disk.
    pub fn model_version(&self) -> String {
        nn::encode_model(&self.network, self.preset.name(), self.seed).0.model_version()
    }

    pub fn preset(&self) -> Preset {
        self.preset
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embedding_dim(&self) -> usize {
        self.preset.embedding_dim()
    }

    /// `(height, width)` expected by the network.
    pub fn input_hw(&self) -> (usize, usize) {
        let [_, h, w] = self.preset.input_shape();
        (h, w)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn branch(&self, _side: Branch) -> &Network {
        &self.network
    }

    /// Wraps a preprocessed signature as a `[1, 1, H, W]` input.
    pub fn input_tensor(&self, img: &NormalizedSignature) -> Result<Tensor, SiameseError> {
        let (h, w) = self.input_hw();
        if (img.height(), img.width()) != (h, w) {
            return Err(SiameseError::Shape(format!(
                "model expects {h}x{w} input, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        Ok(Tensor::new(vec![1, 1, h, w], img.values().to_vec())?)
    }

    pub fn embed_tensor_on(&self, side: Branch, x: &Tensor) -> Result<Vec<f64>, SiameseError> {
        Ok(self.branch(side).infer(x)?.into_data())
    }

    pub fn embed_tensor(&self, x: &Tensor) -> Result<Vec<f64>, SiameseError> {
        self.embed_tensor_on(Branch::Left, x)
    }

    /// Evaluation-mode embedding of one signature.
    pub fn embed(&self, img: &NormalizedSignature) -> Result<Vec<f64>, SiameseError> {
        self.embed_tensor(&self.input_tensor(img)?)
    }
}

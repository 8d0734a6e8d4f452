//! Model container: one JSON header line, then every parameter tensor as raw
//! little-endian `f32` in declaration order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{LayerSpec, Network, NnError, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFormatError {
    #[error("model file has no header line")]
    MissingHeader,
    #[error("model header is not valid JSON: {0}")]
    Header(String),
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("parameter block is {got} bytes, header declares {expected}")]
    Truncated { expected: usize, got: usize },
    #[error("parameter checksum mismatch")]
    Checksum,
    #[error("model does not match its layer stack: {0}")]
    Network(#[from] NnError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub preset: String,
    pub seed: u64,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub param_shapes: Vec<Vec<usize>>,
    pub param_count: usize,
    /// Hex SHA-256 of the parameter block.
    pub checksum: String,
}

impl ModelHeader {
    /// Short identifier derived from the parameter checksum.
    pub fn model_version(&self) -> String {
        self.checksum.chars().take(12).collect()
    }
}

pub fn encode_params(net: &Network) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(net.param_count() * 4);
    for p in net.params() {
        for &v in p.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    bytes
}

pub fn encode_model(net: &Network, preset: &str, seed: u64) -> (ModelHeader, Vec<u8>) {
    let body = encode_params(net);
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        preset: preset.to_string(),
        seed,
        input_shape: net.input_shape().to_vec(),
        layers: net.specs().to_vec(),
        param_shapes: net.params().iter().map(|p| p.shape().to_vec()).collect(),
        param_count: net.param_count(),
        checksum: hex::encode(Sha256::digest(&body)),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&body);
    (header, out)
}

pub fn decode_model(bytes: &[u8]) -> Result<(ModelHeader, Network), ModelFormatError> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or(ModelFormatError::MissingHeader)?;
    let header: ModelHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| ModelFormatError::Header(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(ModelFormatError::Version(header.format_version));
    }
    let body = &bytes[nl + 1..];
    let declared: usize = header.param_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if declared != header.param_count {
        return Err(ModelFormatError::Header("param_count disagrees with param_shapes".into()));
    }
    if body.len() != declared * 4 {
        return Err(ModelFormatError::Truncated { expected: declared * 4, got: body.len() });
    }
    if hex::encode(Sha256::digest(body)) != header.checksum {
        return Err(ModelFormatError::Checksum);
    }
    let mut values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    let mut params = Vec::with_capacity(header.param_shapes.len());
    for shape in &header.param_shapes {
        let len = shape.iter().product();
        params.push(Tensor::new(shape.clone(), values.by_ref().take(len).collect())?);
    }
    let net = Network::with_params(&header.input_shape, header.layers.clone(), params)?;
    Ok((header, net))
}

pub fn save_model(path: &Path, net: &Network, preset: &str, seed: u64) -> Result<ModelHeader, ModelFormatError> {
    let (header, bytes) = encode_model(net, preset, seed);
    let io = |e: std::io::Error| ModelFormatError::Io { path: path.display().to_string(), msg: e.to_string() };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    Ok(header)
}

pub fn load_model(path: &Path) -> Result<(ModelHeader, Network), ModelFormatError> {
    let bytes = std::fs::read(path).map_err(|e| ModelFormatError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    decode_model(&bytes)
}

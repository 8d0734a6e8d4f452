//! Signature corpora on disk: layout readers, signer-disjoint splits, pair
//! generation and a synthetic generator.

mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::imageproc::{preprocess_to, PreprocessError};
use crate::nn::derived_rng;
use crate::raster::{RasterError, SignatureImage};
use crate::siamese::{IndexedPair, PairLabel, PairSet, SiameseError};

pub use synth::{synth_generate, synth_template, ForgeryMode, SynthConfig};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("dataset root {0} does not exist")]
    MissingRoot(String),
    #[error("unknown dataset layout {0:?} (expected cedar_names, per_signer_dirs or manifest)")]
    UnknownLayout(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("signer {0} has no genuine signatures")]
    NoGenuine(String),
    #[error("signer {signer} lists {path} as both genuine and forged")]
    PathInBoth { signer: String, path: String },
    #[error("signer {0} appears more than once")]
    DuplicateSigner(String),
    #[error("{signers} signers cannot fill {splits} splits")]
    TooFewSigners { signers: usize, splits: usize },
    #[error("invalid split ratios: {0}")]
    Ratios(String),
    #[error("signer {0} needs at least 2 genuine signatures to form positive pairs")]
    NoPositives(String),
    #[error("invalid synthetic config: {0}")]
    Synth(String),
    #[error("{path}: {source}")]
    Image { path: String, source: RasterError },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Pairs(#[from] SiameseError),
}

fn io_err(path: &Path, e: impl fmt::Display) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), msg: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignerRecord {
    pub signer_id: String,
    pub genuine: Vec<PathBuf>,
    pub forged: Vec<PathBuf>,
}

impl SignerRecord {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.genuine.is_empty() {
            return Err(DatasetError::NoGenuine(self.signer_id.clone()));
        }
        let genuine: HashSet<&PathBuf> = self.genuine.iter().collect();
        if let Some(p) = self.forged.iter().find(|p| genuine.contains(p)) {
            return Err(DatasetError::PathInBoth { signer: self.signer_id.clone(), path: p.display().to_string() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `original_X_Y.png` and `forgeries_X_Y.png` anywhere below the root.
    CedarNames,
    /// `root/<id>/genuine/*.png` and `root/<id>/forged/*.png`.
    PerSignerDirs,
    /// A JSON index `{"signers": [{"id", "genuine", "forged"}]}`; paths are
    /// relative to the manifest's directory.
    Manifest,
}

impl FromStr for Layout {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cedar_names" => Ok(Layout::CedarNames),
            "per_signer_dirs" => Ok(Layout::PerSignerDirs),
            "manifest" => Ok(Layout::Manifest),
            other => Err(DatasetError::UnknownLayout(other.to_string())),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::CedarNames => "cedar_names",
            Layout::PerSignerDirs => "per_signer_dirs",
            Layout::Manifest => "manifest",
        })
    }
}

/// Reads signer records from `root`. For [`Layout::Manifest`], `root` may be
/// the manifest file itself or a directory holding `manifest.json`.
pub fn load_dataset(root: &Path, layout: Layout) -> Result<Vec<SignerRecord>, DatasetError> {
    if !root.exists() {
        return Err(DatasetError::MissingRoot(root.display().to_string()));
    }
    let records = match layout {
        Layout::CedarNames => load_cedar(root)?,
        Layout::PerSignerDirs => load_per_signer(root)?,
        Layout::Manifest => {
            let file = if root.is_dir() { root.join("manifest.json") } else { root.to_path_buf() };
            load_manifest(&file)?
        }
    };
    let mut seen = HashSet::new();
    for r in &records {
        r.validate()?;
        if !seen.insert(r.signer_id.as_str()) {
            return Err(DatasetError::DuplicateSigner(r.signer_id.clone()));
        }
    }
    if records.is_empty() {
        warn!(root = %root.display(), %layout, "dataset contains no signers");
    } else {
        let (g, f) = records.iter().fold((0, 0), |(g, f), r| (g + r.genuine.len(), f + r.forged.len()));
        info!(signers = records.len(), genuine = g, forged = f, %layout, "dataset loaded");
    }
    Ok(records)
}

fn parse_cedar_name(name: &str) -> Option<(bool, u64, u64)> {
    let (genuine, rest) = if let Some(r) = name.strip_prefix("original_") {
        (true, r)
    } else {
        (false, name.strip_prefix("forgeries_")?)
    };
    let stem = rest.strip_suffix(".png").or_else(|| rest.strip_suffix(".PNG"))?;
    let (signer, sample) = stem.split_once('_')?;
    Some((genuine, signer.parse().ok()?, sample.parse().ok()?))
}

fn load_cedar(root: &Path) -> Result<Vec<SignerRecord>, DatasetError> {
    let mut by_signer: BTreeMap<u64, (Vec<(u64, PathBuf)>, Vec<(u64, PathBuf)>)> = BTreeMap::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| io_err(root, e))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let Some((genuine, signer, sample)) = entry.file_name().to_str().and_then(parse_cedar_name) else {
            continue;
        };
        let slot = by_signer.entry(signer).or_default();
        let list = if genuine { &mut slot.0 } else { &mut slot.1 };
        list.push((sample, entry.into_path()));
    }
    Ok(by_signer
        .into_iter()
        .map(|(id, (mut g, mut f))| {
            g.sort();
            f.sort();
            SignerRecord {
                signer_id: id.to_string(),
                genuine: g.into_iter().map(|(_, p)| p).collect(),
                forged: f.into_iter().map(|(_, p)| p).collect(),
            }
        })
        .collect())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn load_per_signer(root: &Path) -> Result<Vec<SignerRecord>, DatasetError> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| io_err(root, e))? {
        let path = entry.map_err(|e| io_err(root, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    dirs.par_iter()
        .map(|dir| {
            let signer_id = dir.file_name().expect("read_dir entry").to_string_lossy().into_owned();
            Ok(SignerRecord {
                signer_id,
                genuine: png_files(&dir.join("genuine"))?,
                forged: png_files(&dir.join("forged"))?,
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    signers: Vec<ManifestSigner>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestSigner {
    id: String,
    genuine: Vec<PathBuf>,
    #[serde(default)]
    forged: Vec<PathBuf>,
}

fn load_manifest(file: &Path) -> Result<Vec<SignerRecord>, DatasetError> {
    let text = std::fs::read_to_string(file).map_err(|e| io_err(file, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let base = file.parent().unwrap_or(Path::new("."));
    let resolve = |paths: Vec<PathBuf>| -> Result<Vec<PathBuf>, DatasetError> {
        paths
            .into_iter()
            .map(|p| {
                let full = if p.is_absolute() { p } else { base.join(p) };
                if full.is_file() {
                    Ok(full)
                } else {
                    Err(io_err(&full, "listed in manifest but not found"))
                }
            })
            .collect()
    };
    manifest
        .signers
        .into_iter()
        .map(|s| Ok(SignerRecord { signer_id: s.id, genuine: resolve(s.genuine)?, forged: resolve(s.forged)? }))
        .collect()
}

/// Writes a manifest for `records` with paths relative to `file`'s directory
/// where possible.
pub fn write_manifest(file: &Path, records: &[SignerRecord]) -> Result<(), DatasetError> {
    let base = file.parent().unwrap_or(Path::new("."));
    let rel = |ps: &[PathBuf]| ps.iter().map(|p| p.strip_prefix(base).unwrap_or(p).to_path_buf()).collect();
    let manifest = Manifest {
        signers: records
            .iter()
            .map(|r| ManifestSigner { id: r.signer_id.clone(), genuine: rel(&r.genuine), forged: rel(&r.forged) })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(file, text).map_err(|e| io_err(file, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_signers: Vec<String>,
    pub val_signers: Vec<String>,
    pub test_signers: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl SplitPlan {
    pub fn signers(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train_signers,
            Split::Val => &self.val_signers,
            Split::Test => &self.test_signers,
        }
    }

    /// The records of `split`, in the order they appear in `records`.
    pub fn select(&self, records: &[SignerRecord], split: Split) -> Vec<SignerRecord> {
        let ids: HashSet<&str> = self.signers(split).iter().map(String::as_str).collect();
        records.iter().filter(|r| ids.contains(r.signer_id.as_str())).cloned().collect()
    }
}

/// Partitions signers by a seeded shuffle. `ratios` is `[train, test]` or
/// `[train, val, test]`; split sizes come from rounding the cumulative
/// ratios, and every split receives at least one signer.
pub fn split_by_authors(records: &[SignerRecord], ratios: &[f64], seed: u64) -> Result<SplitPlan, DatasetError> {
    if !(2..=3).contains(&ratios.len()) {
        return Err(DatasetError::Ratios(format!("expected 2 or 3 ratios, got {}", ratios.len())));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(DatasetError::Ratios(format!("ratios must be positive: {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(DatasetError::Ratios(format!("ratios sum to {total}, not 1")));
    }
    let n = records.len();
    let k = ratios.len();
    if n < k {
        return Err(DatasetError::TooFewSigners { signers: n, splits: k });
    }
    let mut ids: Vec<String> = records.iter().map(|r| r.signer_id.clone()).collect();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut counts = Vec::with_capacity(k);
    let mut cum = 0.0;
    let mut prev = 0usize;
    for (i, r) in ratios.iter().enumerate() {
        cum += r;
        let bound = if i + 1 == k { n } else { ((cum * n as f64).round() as usize).min(n) };
        counts.push(bound.saturating_sub(prev));
        prev = prev.max(bound);
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let largest = (0..k).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).expect("k >= 2");
        counts[largest] -= 1;
        counts[empty] += 1;
    }
    let mut parts = Vec::with_capacity(k);
    let mut it = ids.into_iter();
    for c in &counts {
        parts.push(it.by_ref().take(*c).collect::<Vec<_>>());
    }
    let test_signers = parts.pop().expect("k >= 2");
    let val_signers = if k == 3 { parts.pop().expect("k == 3") } else { Vec::new() };
    let train_signers = parts.pop().expect("k >= 2");
    Ok(SplitPlan { train_signers, val_signers, test_signers, seed })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub a: PathBuf,
    pub b: PathBuf,
    pub label: PairLabel,
}

/// All unordered genuine-genuine pairs as positives and every genuine-forged
/// combination as negatives. With `balance`, negatives are subsampled (seeded)
/// down to the positive count, keeping their original order.
pub fn generate_pairs(record: &SignerRecord, balance: bool, seed: u64) -> Result<Vec<LabeledPair>, DatasetError> {
    let g = &record.genuine;
    if g.len() < 2 {
        return Err(DatasetError::NoPositives(record.signer_id.clone()));
    }
    let mut out = Vec::new();
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            out.push(LabeledPair { a: g[i].clone(), b: g[j].clone(), label: PairLabel::Positive });
        }
    }
    let positives = out.len();
    let mut negatives: Vec<LabeledPair> = g
        .iter()
        .flat_map(|a| {
            record.forged.iter().map(move |b| LabeledPair { a: a.clone(), b: b.clone(), label: PairLabel::Negative })
        })
        .collect();
    if balance && negatives.len() > positives {
        let mut keep = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), negatives.len(), positives).into_vec();
        keep.sort_unstable();
        negatives = keep.into_iter().map(|i| negatives[i].clone()).collect();
    }
    out.extend(negatives);
    Ok(out)
}

/// Loads every image referenced by the records once, preprocesses it to
/// `height x width`, and builds the balanced or full pair set over them.
pub fn build_pair_set(
    records: &[SignerRecord],
    height: usize,
    width: usize,
    balance: bool,
    seed: u64,
) -> Result<PairSet, DatasetError> {
    let mut paths: Vec<&PathBuf> = Vec::new();
    let mut index_of: HashMap<&PathBuf, usize> = HashMap::new();
    for r in records {
        for p in r.genuine.iter().chain(&r.forged) {
            index_of.entry(p).or_insert_with(|| {
                paths.push(p);
                paths.len() - 1
            });
        }
    }
    let images = paths
        .par_iter()
        .map(|p| {
            let img = SignatureImage::load_png(p)
                .map_err(|source| DatasetError::Image { path: p.display().to_string(), source })?;
            Ok(preprocess_to(&img, height, width)?)
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let mut pairs = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let pair_seed = derived_rng(seed, &[i as u64]).random::<u64>();
        for p in generate_pairs(r, balance, pair_seed)? {
            pairs.push(IndexedPair { a: index_of[&p.a], b: index_of[&p.b], label: p.label });
        }
    }
    Ok(PairSet::from_signatures(&images, pairs)?)
}

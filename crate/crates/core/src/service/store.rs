use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use super::ServiceError;
use crate::raster::SignatureImage;

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreIndex {
    /// User id to reference files, relative to the store directory.
    pub users: BTreeMap<String, Vec<String>>,
    pub model_version: String,
    pub threshold: f64,
}

/// Reference signatures on disk: one subdirectory per user plus an index
/// that pins the model version and threshold the references were enrolled
/// under.
#[derive(Debug)]
pub struct EnrollmentStore {
    dir: PathBuf,
    index: StoreIndex,
}

fn io(path: &Path, e: std::io::Error) -> ServiceError {
    ServiceError::Store(format!("{}: {e}", path.display()))
}

impl EnrollmentStore {
    /// Opens or creates the store. An existing store with enrolled users must
    /// match `model_version` and `threshold`; index entries whose files are
    /// gone are dropped.
    pub fn open(dir: &Path, model_version: &str, threshold: f64) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let index_path = dir.join(INDEX_FILE);
        let fresh = StoreIndex { users: BTreeMap::new(), model_version: model_version.to_string(), threshold };
        let mut index = if index_path.exists() {
            let text = std::fs::read_to_string(&index_path).map_err(|e| io(&index_path, e))?;
            serde_json::from_str::<StoreIndex>(&text)
                .map_err(|e| ServiceError::Store(format!("{}: {e}", index_path.display())))?
        } else {
            fresh.clone()
        };
        for (user, files) in index.users.iter_mut() {
            files.retain(|f| {
                let ok = dir.join(f).is_file();
                if !ok {
                    warn!(%user, file = %f, "enrolled reference missing; dropped from index");
                }
                ok
            });
        }
        index.users.retain(|_, files| !files.is_empty());
        if !index.users.is_empty() && (index.model_version != model_version || index.threshold != threshold) {
            return Err(ServiceError::StoreMismatch {
                stored: format!("{} @ {}", index.model_version, index.threshold),
                current: format!("{model_version} @ {threshold}"),
            });
        }
        if index.users.is_empty() {
            index = fresh;
        }
        let store = Self { dir: dir.to_path_buf(), index };
        store.write_index()?;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn index(&self) -> &StoreIndex {
        &self.index
    }

    pub fn contains(&self, user: &str) -> bool {
        self.index.users.contains_key(user)
    }

    fn user_dir_name(user: &str) -> String {
        hex::encode(Sha256::digest(user.as_bytes()))
    }

    fn write_index(&self) -> Result<(), ServiceError> {
        let path = self.dir.join(INDEX_FILE);
        let tmp = self.dir.join(format!("{INDEX_FILE}.tmp"));
        let text = serde_json::to_string_pretty(&self.index).expect("index serializes");
        std::fs::write(&tmp, text).map_err(|e| io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| io(&path, e))
    }

    /// Stores one reference image; returns its id (the file path relative to
    /// the store).
    pub fn enroll(&mut self, user: &str, image: &SignatureImage) -> Result<String, ServiceError> {
        let sub = Self::user_dir_name(user);
        let user_dir = self.dir.join(&sub);
        std::fs::create_dir_all(&user_dir).map_err(|e| io(&user_dir, e))?;
        let existing = self.index.users.get(user).map_or(0, Vec::len);
        let mut n = existing;
        let rel = loop {
            let rel = format!("{sub}/{n:04}.png");
            if !self.dir.join(&rel).exists() {
                break rel;
            }
            n += 1;
        };
        image
            .save_png(&self.dir.join(&rel))
            .map_err(|e| ServiceError::Store(e.to_string()))?;
        self.index.users.entry(user.to_string()).or_default().push(rel.clone());
        if let Err(e) = self.write_index() {
            let files = self.index.users.get_mut(user).expect("just inserted");
            files.pop();
            if files.is_empty() {
                self.index.users.remove(user);
            }
            return Err(e);
        }
        Ok(rel)
    }

    pub fn references(&self, user: &str) -> Result<Vec<SignatureImage>, ServiceError> {
        let files = self.index.users.get(user).ok_or_else(|| ServiceError::UnknownUser(user.to_string()))?;
        files
            .iter()
            .map(|f| SignatureImage::load_png(&self.dir.join(f)).map_err(|e| ServiceError::Store(e.to_string())))
            .collect()
    }
}

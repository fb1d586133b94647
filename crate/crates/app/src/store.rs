//! On-disk store: content-addressed immutable artifacts plus mutable job and session records.
//!
//! Layout under the data directory:
//! `datasets/<id>.json`, `artifacts/<id>.json`, `jobs/<id>.json`, `sessions/<id>.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cbm_proposals::Dataset;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

pub const DATA_DIR_ENV: &str = "CBM_DATA_DIR";

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Short SHA-256 content id.
pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..12])
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

/// Writes via a temporary file and rename so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(tmp, path)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> AppResult<Self> {
        let root = root.into();
        for sub in ["datasets", "artifacts", "jobs", "sessions"] {
            fs::create_dir_all(root.join(sub)).map_err(AppError::internal)?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, dir: &str, id: &str) -> AppResult<PathBuf> {
        if !valid_id(id) {
            return Err(AppError::not_found(format!("no {} with id {id:?}", dir.trim_end_matches('s'))));
        }
        Ok(self.root.join(dir).join(format!("{id}.json")))
    }

    fn put_immutable(&self, dir: &str, bytes: &[u8]) -> AppResult<String> {
        let id = content_id(bytes);
        let path = self.path(dir, &id)?;
        if !path.exists() {
            write_atomic(&path, bytes).map_err(AppError::internal)?;
        }
        Ok(id)
    }

    fn read(&self, dir: &str, id: &str) -> AppResult<String> {
        let path = self.path(dir, id)?;
        match fs::read_to_string(&path) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(AppError::not_found(format!("no {} with id {id:?}", dir.trim_end_matches('s'))))
            }
            Err(e) => Err(AppError::internal(e)),
        }
    }

    pub fn put_dataset(&self, data: &Dataset) -> AppResult<String> {
        let text = data.to_json().map_err(AppError::internal)?;
        self.put_immutable("datasets", text.as_bytes())
    }

    pub fn dataset(&self, id: &str) -> AppResult<Dataset> {
        Dataset::from_json(&self.read("datasets", id)?).map_err(AppError::internal)
    }

    pub fn put_artifact<T: Serialize>(&self, value: &T) -> AppResult<String> {
        let bytes = serde_json::to_vec(value).map_err(AppError::internal)?;
        self.put_immutable("artifacts", &bytes)
    }

    pub fn artifact<T: DeserializeOwned>(&self, id: &str) -> AppResult<T> {
        serde_json::from_str(&self.read("artifacts", id)?).map_err(AppError::internal)
    }

    pub fn put_record<T: Serialize>(&self, dir: &str, id: &str, value: &T) -> AppResult<()> {
        let bytes = serde_json::to_vec_pretty(value).map_err(AppError::internal)?;
        write_atomic(&self.path(dir, id)?, &bytes).map_err(AppError::internal)
    }

    pub fn record<T: DeserializeOwned>(&self, dir: &str, id: &str) -> AppResult<T> {
        serde_json::from_str(&self.read(dir, id)?).map_err(AppError::internal)
    }

    /// Every record in `dir`, in file-name order. Unreadable files are skipped with a warning.
    pub fn records<T: DeserializeOwned>(&self, dir: &str) -> AppResult<Vec<T>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(self.root.join(dir))
            .map_err(AppError::internal)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut out = Vec::with_capacity(paths.len());
        for p in paths {
            match fs::read_to_string(&p).map_err(|e| e.to_string()).and_then(|s| serde_json::from_str(&s).map_err(|e| e.to_string())) {
                Ok(v) => out.push(v),
                Err(e) => log::warn!("skipping unreadable record {}: {e}", p.display()),
            }
        }
        Ok(out)
    }
}

//! Text checkpoints for linear models (policies and reward estimators).
//!
//! A checkpoint is a JSON document:
//!
//! ```json
//! {"kind":"policy","vocab_size":3,"max_len":2,"feature_map":{"type":"tabular"},
//!  "weights":{"1234":0.5}}
//! ```
//!
//! Weights are written with the shortest decimal that parses back to the same
//! `f64`, and parsed with correct rounding, so a save/load cycle is exact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Policy,
    RewardModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<F> {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub max_len: usize,
    pub feature_map: F,
    pub weights: BTreeMap<FeatureId, f64>,
}

impl<F: Serialize + DeserializeOwned> Checkpoint<F> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a checkpoint and checks that it holds a model of `expected` kind
    /// with finite weights.
    pub fn from_json(text: &str, expected: ModelKind) -> Result<Self> {
        let ckpt: Self =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.kind != expected {
            return Err(Error::Checkpoint(format!(
                "expected a {expected:?} checkpoint, found {:?}",
                ckpt.kind
            )));
        }
        if let Some((id, w)) = ckpt.weights.iter().find(|(_, w)| !w.is_finite()) {
            return Err(Error::Checkpoint(format!("weight {id} is not finite: {w}")));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path, expected: ModelKind) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?, expected)
    }
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`, so a
/// reader never observes a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => Path::new(&tmp_name).to_path_buf(),
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let ckpt = Checkpoint {
            kind: ModelKind::RewardModel,
            vocab_size: 3,
            max_len: 2,
            feature_map: (),
            weights: BTreeMap::new(),
        };
        let text = ckpt.to_json().unwrap();
        assert!(Checkpoint::<()>::from_json(&text, ModelKind::Policy).is_err());
        assert!(Checkpoint::<()>::from_json(&text, ModelKind::RewardModel).is_ok());
    }

    #[test]
    fn corrupted_text_is_rejected() {
        assert!(matches!(
            Checkpoint::<()>::from_json("{\"kind\":\"policy\",", ModelKind::Policy),
            Err(Error::Checkpoint(_))
        ));
    }
}

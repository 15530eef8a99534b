//! On-disk feature cache: one flat little-endian `f64` file per record and a
//! JSON index. Records are keyed by a SHA-256 of the clip bytes and every
//! parameter that influences the features.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fusion::BandFeatureSet;

/// Bumped whenever the DSP or encoder output changes.
pub const FEATURE_VERSION: u32 = 1;
const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub file: String,
    pub stage: String,
    pub encoder: String,
    pub model_rate_hz: u32,
    pub bands: usize,
    pub dim: usize,
    pub handcrafted: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    version: u32,
    records: BTreeMap<String, CacheRecord>,
}

/// Readers may call [`FeatureCache::get`] concurrently; [`FeatureCache::put`]
/// takes `&mut self`, so writes are serialized by the borrow checker.
#[derive(Debug)]
pub struct FeatureCache {
    dir: PathBuf,
    index: Index,
    dirty: bool,
}

pub fn cache_key(clip_bytes: &[u8], stage: &str, encoder: &str, model_rate_hz: u32) -> String {
    let mut h = Sha256::new();
    h.update(FEATURE_VERSION.to_le_bytes());
    h.update(model_rate_hz.to_le_bytes());
    for part in [stage.as_bytes(), encoder.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(clip_bytes);
    hex::encode(h.finalize())
}

impl FeatureCache {
    /// Opens or creates a cache in `dir`. An index written by another
    /// feature version is discarded.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(INDEX_FILE);
        let index = match std::fs::read_to_string(&path) {
            Ok(text) => {
                let index: Index = serde_json::from_str(&text)
                    .map_err(|e| Error::Cache(format!("{}: {e}", path.display())))?;
                if index.version == FEATURE_VERSION {
                    index
                } else {
                    log::info!("discarding feature cache of version {}", index.version);
                    Index::default()
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Index::default(),
            Err(e) => return Err(Error::io(path, e)),
        };
        Ok(Self {
            dir,
            index,
            dirty: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.records.is_empty()
    }

    /// Cached features for `key`, or `None` on a miss or a damaged record.
    pub fn get(&self, key: &str) -> Option<BandFeatureSet> {
        let rec = self.index.records.get(key)?;
        match self.read_record(rec) {
            Ok(f) => Some(f),
            Err(e) => {
                log::warn!("ignoring cache record {key}: {e}");
                None
            }
        }
    }

    fn read_record(&self, rec: &CacheRecord) -> Result<BandFeatureSet> {
        let path = self.dir.join(&rec.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let per_band = rec.dim + if rec.handcrafted { 2 } else { 0 };
        if bytes.len() != rec.bands * per_band * 8 {
            return Err(Error::Cache(format!("{}: truncated record", path.display())));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let (func, hc) = values.split_at(rec.bands * rec.dim);
        Ok(BandFeatureSet {
            functionals: func.chunks(rec.dim).map(<[f64]>::to_vec).collect(),
            handcrafted: rec
                .handcrafted
                .then(|| hc.chunks(2).map(|p| [p[0], p[1]]).collect()),
            label: None,
        })
    }

    pub fn put(
        &mut self,
        key: &str,
        stage: &str,
        encoder: &str,
        model_rate_hz: u32,
        features: &BandFeatureSet,
    ) -> Result<()> {
        let file = format!("{key}.f64");
        let mut bytes = Vec::new();
        for v in features.functionals.iter().flatten() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for p in features.handcrafted.iter().flatten() {
            bytes.extend_from_slice(&p[0].to_le_bytes());
            bytes.extend_from_slice(&p[1].to_le_bytes());
        }
        let path = self.dir.join(&file);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.index.records.insert(
            key.to_string(),
            CacheRecord {
                file,
                stage: stage.to_string(),
                encoder: encoder.to_string(),
                model_rate_hz,
                bands: features.band_count(),
                dim: features.dim(),
                handcrafted: features.handcrafted.is_some(),
            },
        );
        self.dirty = true;
        Ok(())
    }

    /// Writes the index atomically if anything changed.
    pub fn flush(&mut self) -> Result<()> {
        if !self.dirty {
            return Ok(());
        }
        self.index.version = FEATURE_VERSION;
        let path = self.dir.join(INDEX_FILE);
        let tmp = self.dir.join(format!("{INDEX_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(&self.index)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        self.dirty = false;
        Ok(())
    }
}

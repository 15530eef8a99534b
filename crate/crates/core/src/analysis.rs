//! Representation analyses: how similar each band's functional is to the
//! baseband functional, and how well a set of vectors separates classes
//! under cosine similarity.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::BandFeatureSet;

/// Cosine similarity. Defined as 0 when either vector is zero.
///
/// # Panics
/// If the lengths differ.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different lengths");
    let nu = crate::dsp::dot(u, u).sqrt();
    let nv = crate::dsp::dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        log::warn!("cosine similarity with a zero vector; using 0");
        return 0.0;
    }
    if u == v {
        return 1.0;
    }
    (crate::dsp::dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    /// Entry `b - 1` is the mean cosine between band 1 and band `b`.
    pub per_band_mean_cosine: Vec<f64>,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparationReport {
    pub intra: f64,
    pub inter: f64,
    pub separation: f64,
}

/// Mean cosine of every band functional against band 1, over clips.
pub fn band_similarity(clips: &[BandFeatureSet]) -> Result<SimilarityReport> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Invalid("band similarity of an empty set".into()))?;
    let bands = first.band_count();
    let mut sums = vec![0.0; bands];
    for clip in clips {
        clip.check_shape()?;
        if clip.band_count() != bands || clip.dim() != first.dim() {
            return Err(Error::Shape(format!(
                "clip has {} x {} functionals, expected {} x {}",
                clip.band_count(),
                clip.dim(),
                bands,
                first.dim()
            )));
        }
        let base = &clip.functionals[0];
        for (s, f) in sums.iter_mut().zip(&clip.functionals) {
            *s += cosine(base, f);
        }
    }
    let n = clips.len();
    Ok(SimilarityReport {
        per_band_mean_cosine: sums.into_iter().map(|s| s / n as f64).collect(),
        sample_count: n,
    })
}

/// Mean cosine over unordered same-class and different-class pairs.
pub fn class_separation<V: AsRef<[f64]>, L: PartialEq>(vectors: &[(V, L)]) -> Result<SeparationReport> {
    let (mut intra, mut n_intra) = (0.0, 0usize);
    let (mut inter, mut n_inter) = (0.0, 0usize);
    for (i, (u, lu)) in vectors.iter().enumerate() {
        for (v, lv) in &vectors[i + 1..] {
            let c = cosine(u.as_ref(), v.as_ref());
            if lu == lv {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 {
        return Err(Error::Invalid("no class has two or more members".into()));
    }
    if n_inter == 0 {
        return Err(Error::Invalid("class separation needs at least two classes".into()));
    }
    let intra = intra / n_intra as f64;
    let inter = inter / n_inter as f64;
    Ok(SeparationReport {
        intra,
        inter,
        separation: intra - inter,
    })
}

pub const BAND_SIMILARITY_FILE: &str = "band_similarity.csv";
pub const CLASS_SEPARATION_FILE: &str = "class_separation.csv";

#[derive(Serialize)]
struct SimilarityRow {
    band: usize,
    mean_cosine: f64,
    n: usize,
}

#[derive(Serialize)]
struct SeparationRow<'a> {
    method: &'a str,
    intra: f64,
    inter: f64,
    separation: f64,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_band_similarity(path: impl AsRef<Path>, report: &SimilarityReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    for (i, &mean_cosine) in report.per_band_mean_cosine.iter().enumerate() {
        w.serialize(SimilarityRow {
            band: i + 1,
            mean_cosine,
            n: report.sample_count,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_class_separation(path: impl AsRef<Path>, rows: &[(String, SeparationReport)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    for (method, r) in rows {
        w.serialize(SeparationRow {
            method,
            intra: r.intra,
            inter: r.inter,
            separation: r.separation,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

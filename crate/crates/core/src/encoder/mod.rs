//! Band encoding: frame-level encoders, temporal pooling into functionals,
//! handcrafted spectral descriptors and train-split standardization.

mod bridge;
mod handcrafted;
mod reference;

pub use bridge::{decode_f32_base64, encode_f32_base64, BridgeEncoder, BridgeRequest, BridgeResponse, PROTOCOL_VERSION};
pub use handcrafted::{handcrafted, HandcraftedFeatures, HANDCRAFTED_FFT_SIZE, HANDCRAFTED_HOP};
pub use reference::ReferenceEncoder;

use serde::{Deserialize, Serialize};

use crate::band::BandSignal;
use crate::error::{Error, Result};

/// Frame embeddings of one band, stored row-major as `T x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddings {
    frames: Vec<f64>,
    dim: usize,
    pub frame_rate_hz: f64,
    pub band_index: usize,
}

impl FrameEmbeddings {
    pub fn new(frames: Vec<f64>, dim: usize, frame_rate_hz: f64, band_index: usize) -> Result<Self> {
        if dim == 0 || frames.is_empty() || !frames.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form a non-empty frame matrix of width {dim}",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite frame embedding".into()));
        }
        Ok(Self {
            frames,
            dim,
            frame_rate_hz,
            band_index,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.frames.chunks_exact(self.dim)
    }
}

/// Fixed-length summary `f_b` of one band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Functional {
    pub vector: Vec<f64>,
    pub band_index: usize,
}

impl Functional {
    pub fn new(vector: Vec<f64>, band_index: usize) -> Self {
        Self { vector, band_index }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// A frozen frame-level encoder operating at a fixed sample rate.
pub trait Encoder: Send + Sync {
    /// Stable identifier, used in cache keys.
    fn id(&self) -> String;

    fn sample_rate_hz(&self) -> u32;

    /// Length of the longest input handled in one pass; longer signals are
    /// chunked by [`encode_functional`].
    fn context_samples(&self) -> usize;

    /// Shortest input worth encoding on its own.
    fn min_samples(&self) -> usize {
        1
    }

    fn encode(&self, band: &BandSignal) -> Result<FrameEmbeddings>;
}

/// Runs `encoder` on `band`, rejecting signals at the wrong rate.
pub fn encode(band: &BandSignal, encoder: &dyn Encoder) -> Result<FrameEmbeddings> {
    if band.sample_rate_hz != encoder.sample_rate_hz() {
        return Err(Error::RateMismatch {
            expected: encoder.sample_rate_hz(),
            actual: band.sample_rate_hz,
        });
    }
    if band.samples.is_empty() {
        return Err(Error::Invalid("cannot encode an empty band".into()));
    }
    encoder.encode(band)
}

/// Temporal mean of the frame embeddings.
pub fn pool_functional(frames: &FrameEmbeddings) -> Functional {
    let mut mean = vec![0.0; frames.dim()];
    for row in frames.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let t = frames.frame_count() as f64;
    mean.iter_mut().for_each(|m| *m /= t);
    Functional::new(mean, frames.band_index)
}

/// Encodes `band` in chunks of the encoder's context length and averages
/// the per-chunk functionals. A trailing chunk shorter than
/// [`Encoder::min_samples`] is dropped unless it is the only one.
pub fn encode_functional(band: &BandSignal, encoder: &dyn Encoder) -> Result<Functional> {
    let context = encoder.context_samples().max(1);
    let chunks: Vec<&[f64]> = band.samples.chunks(context).collect();
    let keep: Vec<&[f64]> = if chunks.len() > 1 {
        chunks
            .iter()
            .copied()
            .filter(|c| c.len() >= encoder.min_samples())
            .collect()
    } else {
        chunks
    };
    let mut acc: Option<Vec<f64>> = None;
    for chunk in &keep {
        let part = BandSignal {
            band_index: band.band_index,
            samples: chunk.to_vec(),
            sample_rate_hz: band.sample_rate_hz,
        };
        let f = pool_functional(&encode(&part, encoder)?);
        match acc.as_mut() {
            None => acc = Some(f.vector),
            Some(a) => {
                if a.len() != f.vector.len() {
                    return Err(Error::Shape("encoder changed dimension between chunks".into()));
                }
                a.iter_mut().zip(&f.vector).for_each(|(a, v)| *a += v);
            }
        }
    }
    let mut vector = acc.ok_or_else(|| Error::Invalid("cannot encode an empty band".into()))?;
    let n = keep.len() as f64;
    vector.iter_mut().for_each(|v| *v /= n);
    Ok(Functional::new(vector, band.band_index))
}

/// Per-dimension z-scoring fitted on training functionals only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and standard deviation per dimension over all rows.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        for row in rows {
            if sum.is_empty() {
                sum = vec![0.0; row.len()];
                sum_sq = vec![0.0; row.len()];
            } else if row.len() != sum.len() {
                return Err(Error::Shape(format!(
                    "functional of dimension {} among dimension {}",
                    row.len(),
                    sum.len()
                )));
            }
            for (i, v) in row.iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Invalid("no rows to fit standardization".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let sd = (sq / n - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, v: &mut [f64]) {
        for ((x, m), s) in v.iter_mut().zip(&self.mean).zip(&self.scale) {
            *x = (*x - m) / s;
        }
    }
}

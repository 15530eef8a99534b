//! Synthetic two-class dataset whose only class information is a chirp far
//! above the encoder's band: both classes share the same broadband noise
//! distribution and differ only in the chirp's frequency range.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signal_io::{write_wav, Split};

/// `(label, start Hz, end Hz)` of each class's chirp.
pub const CHIRP_CLASSES: [(&str, f64, f64); 2] = [("low", 49_000.0, 51_000.0), ("high", 53_000.0, 55_000.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct ChirpDatasetSpec {
    pub clips: usize,
    pub train: usize,
    pub val: usize,
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    pub noise_std: f64,
    /// Chirp amplitude range.
    pub amplitude: (f64, f64),
    /// Maximum random offset of the chirp's frequency range.
    pub jitter_hz: f64,
    pub seed: u64,
}

impl Default for ChirpDatasetSpec {
    fn default() -> Self {
        Self {
            clips: 400,
            train: 200,
            val: 50,
            sample_rate_hz: 250_000,
            duration_s: 0.25,
            noise_std: 0.05,
            amplitude: (0.2, 0.4),
            jitter_hz: 300.0,
            seed: 0,
        }
    }
}

#[derive(Serialize)]
struct Row<'a> {
    path: &'a str,
    label: &'a str,
    split: Split,
}

/// Writes `clip_NNNN.wav` files and `manifest.csv` into `dir` and returns
/// the manifest path. Classes alternate, so every split is balanced when its
/// size is even.
pub fn write_chirp_dataset(dir: impl AsRef<Path>, spec: &ChirpDatasetSpec) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if spec.train + spec.val > spec.clips || spec.train < 2 || spec.clips == spec.train + spec.val {
        return Err(Error::Invalid(format!(
            "split sizes {} + {} leave no test clips out of {}",
            spec.train, spec.val, spec.clips
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Invalid(e.to_string()))?;
    let fs = spec.sample_rate_hz as f64;
    let n = (spec.duration_s * fs).round() as usize;

    let manifest = dir.join("manifest.csv");
    let file = std::fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut w = csv::Writer::from_writer(file);
    for i in 0..spec.clips {
        let (label, f0, f1) = CHIRP_CLASSES[i % 2];
        let offset = rng.random_range(-spec.jitter_hz..=spec.jitter_hz);
        let (f0, f1) = (f0 + offset, f1 + offset);
        let amp = rng.random_range(spec.amplitude.0..=spec.amplitude.1);
        let phase = rng.random_range(0.0..2.0 * PI);
        let rate = (f1 - f0) / spec.duration_s;
        let samples: Vec<f64> = (0..n)
            .map(|k| {
                let t = k as f64 / fs;
                amp * (phase + 2.0 * PI * (f0 * t + 0.5 * rate * t * t)).sin() + noise.sample(&mut rng)
            })
            .collect();
        let name = format!("clip_{i:04}.wav");
        write_wav(dir.join(&name), &samples, spec.sample_rate_hz)?;
        let split = if i < spec.train {
            Split::Train
        } else if i < spec.train + spec.val {
            Split::Val
        } else {
            Split::Test
        };
        w.serialize(Row {
            path: &name,
            label,
            split,
        })?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{load_clip, load_manifest};

    #[test]
    fn writes_a_balanced_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ChirpDatasetSpec {
            clips: 8,
            train: 4,
            val: 2,
            duration_s: 0.01,
            ..Default::default()
        };
        let path = write_chirp_dataset(dir.path(), &spec).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.label_vocab(), ["high", "low"]);
        assert_eq!(m.split(Split::Train).count(), 4);
        assert_eq!(m.split(Split::Val).count(), 2);
        assert_eq!(m.split(Split::Test).count(), 2);
        let clip = load_clip(m.resolve(&m.entries()[0])).unwrap();
        assert_eq!((clip.sample_rate_hz(), clip.len()), (250_000, 2500));

        let again = tempfile::tempdir().unwrap();
        write_chirp_dataset(again.path(), &spec).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("clip_0003.wav")).unwrap(),
            std::fs::read(again.path().join("clip_0003.wav")).unwrap()
        );
    }
}

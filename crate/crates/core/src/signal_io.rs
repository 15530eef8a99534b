//! Clip and manifest loading.
//!
//! WAV files are decoded with `hound`; integer PCM is scaled by `2^(bits-1)`
//! and multi-channel audio is folded to mono by averaging channels. Manifests
//! are UTF-8 CSV files with the fixed header `path,label,split`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A mono recording at its native sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
    source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, source_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("audio clip has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Invalid("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Decodes a WAV file into a mono clip at its native rate.
pub fn load_clip(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let wav_err = |message: String| Error::Wav {
        path: path.to_path_buf(),
        message,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => wav_err(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(wav_err("zero channels".into()));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(e.to_string()))?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(e.to_string()))?
        }
        (format, bits) => {
            return Err(wav_err(format!("unsupported codec: {format:?} {bits}-bit")));
        }
    };

    let frames = interleaved.len() / channels;
    if frames == 0 {
        return Err(Error::EmptyAudio {
            path: path.to_path_buf(),
        });
    }
    let mono: Vec<f64> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };

    AudioClip::new(mono, spec.sample_rate, path.display().to_string()).map_err(|e| wav_err(e.to_string()))
}

/// Writes mono samples as a 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate_hz: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        writer.write_sample(s as f32).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clip_path: String,
    pub label: String,
    pub split: Split,
}

/// Validated list of labelled clips with a sorted label vocabulary.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    label_vocab: Vec<String>,
    base_dir: PathBuf,
}

#[derive(Deserialize)]
struct ManifestRow {
    path: String,
    label: String,
    split: String,
}

impl DatasetManifest {
    /// Builds a manifest from entries, checking the manifest invariants.
    /// Relative clip paths resolve against `base_dir`.
    pub fn from_entries(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let base_dir = base_dir.into();
        let err = |message: String| Error::Manifest {
            path: base_dir.clone(),
            message,
        };
        if entries.is_empty() {
            return Err(err("manifest is empty".into()));
        }
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for e in &entries {
            if let Some(prev) = seen.insert(e.clip_path.as_str(), e.split) {
                return Err(err(format!(
                    "duplicate clip path {:?} (in {prev} and {})",
                    e.clip_path, e.split
                )));
            }
        }
        let label_vocab: Vec<String> = entries
            .iter()
            .map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if label_vocab.len() < 2 {
            return Err(err(format!("need at least 2 labels, found {}", label_vocab.len())));
        }
        Ok(Self {
            entries,
            label_vocab,
            base_dir,
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn label_vocab(&self) -> &[String] {
        &self.label_vocab
    }

    pub fn class_count(&self) -> usize {
        self.label_vocab.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_vocab.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.clip_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Parses and validates a `path,label,split` CSV manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let err = |message: String| Error::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => err(format!("{other:?}")),
        })?;
    let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
        return Err(err(format!(
            "expected header `path,label,split`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut entries = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| err(format!("row {line}: {e}")))?;
        let split = row
            .split
            .parse::<Split>()
            .map_err(|m| err(format!("row {line} ({}): {m}", row.path)))?;
        if row.path.is_empty() || row.label.is_empty() {
            return Err(err(format!("row {line}: empty path or label")));
        }
        entries.push(ManifestEntry {
            clip_path: row.path,
            label: row.label,
            split,
        });
    }

    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::from_entries(entries, base_dir).map_err(|e| match e {
        Error::Manifest { message, .. } => err(message),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_pcm16(path: &Path, channels: u16, rate: u32, frames: &[Vec<i16>]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for frame in frames {
            for &s in frame {
                w.write_sample(s).unwrap();
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_mono_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let frames: Vec<Vec<i16>> = (0..1000).map(|i| vec![(i * 13 % 2000) as i16 - 1000]).collect();
        write_pcm16(&p, 1, 250_000, &frames);
        let clip = load_clip(&p).unwrap();
        assert_eq!(clip.sample_rate_hz(), 250_000);
        assert_eq!(clip.len(), 1000);
        assert_eq!(clip.samples()[0], -1000.0 / 32768.0);
    }

    #[test]
    fn stereo_antiphase_folds_to_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let frames: Vec<Vec<i16>> = (0..500).map(|i| vec![i as i16 * 7, -(i as i16 * 7)]).collect();
        write_pcm16(&p, 2, 44_100, &frames);
        let clip = load_clip(&p).unwrap();
        assert_eq!(clip.len(), 500);
        assert!(clip.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn float_wav_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let src: Vec<f64> = (0..800).map(|i| 0.5 * (i as f64 * 0.01).sin()).collect();
        write_wav(&p, &src, 48_000).unwrap();
        let clip = load_clip(&p).unwrap();
        let max_err = src
            .iter()
            .zip(clip.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-7, "max error {max_err}");
    }

    #[test]
    fn load_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.wav");
        let frames: Vec<Vec<i16>> = (0..300).map(|i| vec![(i * 101 % 7000) as i16]).collect();
        write_pcm16(&p, 1, 16_000, &frames);
        assert_eq!(load_clip(&p).unwrap(), load_clip(&p).unwrap());
    }

    #[test]
    fn missing_and_empty_files_report_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.wav");
        let e = load_clip(&missing).unwrap_err();
        assert!(e.to_string().contains("nope.wav"));

        let empty = dir.path().join("empty.wav");
        write_pcm16(&empty, 1, 16_000, &[]);
        let e = load_clip(&empty).unwrap_err();
        assert!(matches!(e, Error::EmptyAudio { .. }));
        assert!(e.to_string().contains("empty.wav"));

        let garbage = dir.path().join("garbage.wav");
        std::fs::write(&garbage, b"not a riff file at all").unwrap();
        assert!(load_clip(&garbage).unwrap_err().to_string().contains("garbage.wav"));
    }

    fn manifest_file(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn manifest_parses_and_sorts_vocab() {
        let dir = tempfile::tempdir().unwrap();
        let p = manifest_file(
            dir.path(),
            "path,label,split\nw.wav,b,train\nx.wav,a,train\ny.wav,b,val\nz.wav,a,test\n",
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.class_count(), 2);
        assert_eq!(m.label_vocab(), ["a", "b"]);
        assert_eq!(m.label_index("b"), Some(1));
        assert_eq!(m.split(Split::Train).count(), 2);
        assert_eq!(m.resolve(&m.entries()[0]), dir.path().join("w.wav"));
    }

    #[test]
    fn manifest_rejects_unknown_split() {
        let dir = tempfile::tempdir().unwrap();
        let p = manifest_file(dir.path(), "path,label,split\nx.wav,a,train\ny.wav,b,dev\n");
        let msg = load_manifest(&p).unwrap_err().to_string();
        assert!(msg.contains("row 3"), "{msg}");
        assert!(msg.contains("dev"), "{msg}");
    }

    #[test]
    fn manifest_rejects_duplicates_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = manifest_file(dir.path(), "path,label,split\nx.wav,a,train\nx.wav,b,test\n");
        assert!(load_manifest(&p).unwrap_err().to_string().contains("duplicate"));

        let p = manifest_file(dir.path(), "path,label,split\n");
        assert!(load_manifest(&p).unwrap_err().to_string().contains("empty"));

        let p = manifest_file(dir.path(), "path,label,split\nx.wav,a,train\ny.wav,a,test\n");
        assert!(load_manifest(&p).unwrap_err().to_string().contains("2 labels"));
    }
}

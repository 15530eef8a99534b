//! End-to-end experiments over a dataset manifest: feature extraction for the
//! baseband (`BB`), time-expansion (`TE`) and multi-band pipelines, probe and
//! fusion training, Test accuracy, and the comparison tables.

pub mod cache;
pub mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, SeparationReport, SimilarityReport};
use crate::band::{time_expand, to_baseband, Decomposer};
use crate::encoder::{encode_functional, handcrafted, BridgeEncoder, Encoder, ReferenceEncoder, Standardizer};
use crate::error::{Error, Result};
use crate::fusion::{self, BandFeatureSet, FusionConfig, FusionModel, Strategy};
use crate::signal_io::{load_clip, load_manifest, DatasetManifest, Split};
use cache::{cache_key, FeatureCache};

pub const SPEC_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.csv";
pub const GAIN_FILE: &str = "gain_over_baseband.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// A row of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "BB")]
    Baseband,
    #[serde(rename = "TE")]
    TimeExpansion,
    #[serde(rename = "MP")]
    MeanPool,
    #[serde(rename = "GP")]
    GatedPool,
    #[serde(rename = "MoE")]
    MixtureOfExperts,
    #[serde(rename = "HYB")]
    Hybrid,
    #[serde(rename = "SA")]
    SelfAttention,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Baseband,
        Method::TimeExpansion,
        Method::MeanPool,
        Method::GatedPool,
        Method::MixtureOfExperts,
        Method::Hybrid,
        Method::SelfAttention,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Baseband => "BB",
            Method::TimeExpansion => "TE",
            other => other.fusion().expect("fusion method").tag(),
        }
    }

    pub fn stage(self) -> Stage {
        match self {
            Method::Baseband => Stage::Baseband,
            Method::TimeExpansion => Stage::TimeExpansion,
            _ => Stage::MultiBand,
        }
    }

    /// Fusion strategy of the multi-band methods.
    pub fn fusion(self) -> Option<Strategy> {
        match self {
            Method::Baseband | Method::TimeExpansion => None,
            Method::MeanPool => Some(Strategy::MeanPool),
            Method::GatedPool => Some(Strategy::GatedPool),
            Method::MixtureOfExperts => Some(Strategy::MixtureOfExperts),
            Method::Hybrid => Some(Strategy::Hybrid),
            Method::SelfAttention => Some(Strategy::SelfAttention),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown method {s:?}")))
    }
}

/// Signal path whose features a method consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Baseband,
    TimeExpansion,
    MultiBand,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Baseband => "BB",
            Stage::TimeExpansion => "TE",
            Stage::MultiBand => "MB",
        }
    }
}

/// `"builtin"` or an external encoder endpoint (`tcp://host:port`,
/// `stdio:<command>`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EncoderChoice {
    Builtin,
    External(String),
}

impl TryFrom<String> for EncoderChoice {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EncoderChoice> for String {
    fn from(c: EncoderChoice) -> String {
        c.to_string()
    }
}

impl FromStr for EncoderChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "builtin" {
            Ok(EncoderChoice::Builtin)
        } else if s.starts_with("tcp://") || s.starts_with("stdio:") {
            Ok(EncoderChoice::External(s.to_string()))
        } else {
            Err(Error::Invalid(format!(
                "encoder must be \"builtin\", tcp://host:port or stdio:<command>, got {s:?}"
            )))
        }
    }
}

impl fmt::Display for EncoderChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderChoice::Builtin => f.write_str("builtin"),
            EncoderChoice::External(e) => f.write_str(e),
        }
    }
}

fn default_model_rate() -> u32 {
    16_000
}
fn default_encoder() -> EncoderChoice {
    EncoderChoice::Builtin
}
fn default_version() -> u32 {
    SPEC_VERSION
}

/// Training hyperparameters shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl Default for FusionSettings {
    fn default() -> Self {
        let c = FusionConfig::new(Strategy::MeanPool, 1, 1, 2);
        Self {
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            momentum: c.momentum,
            batch_size: c.batch_size,
            hidden: c.hidden,
            heads: c.heads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    pub manifest: PathBuf,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderChoice,
    #[serde(default = "default_model_rate")]
    pub model_rate_hz: u32,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub fusion: FusionSettings,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Defaults to the manifest's parent directory name.
    #[serde(default)]
    pub dataset_id: Option<String>,
    /// Feature-extraction threads; defaults to the available cores.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Context length of an external encoder.
    #[serde(default)]
    pub context_seconds: Option<f64>,
}

impl ExperimentSpec {
    pub fn new(manifest: impl Into<PathBuf>, methods: Vec<Method>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            version: SPEC_VERSION,
            manifest: manifest.into(),
            encoder: EncoderChoice::Builtin,
            model_rate_hz: default_model_rate(),
            methods,
            fusion: FusionSettings::default(),
            seed: 0,
            output_dir: output_dir.into(),
            cache_dir: None,
            dataset_id: None,
            workers: None,
            context_seconds: None,
        }
    }

    /// Reads a JSON spec; relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut spec.manifest);
        rebase(&mut spec.output_dir);
        if let Some(c) = spec.cache_dir.as_mut() {
            rebase(c);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SPEC_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported spec version {}, expected {SPEC_VERSION}",
                self.version
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Invalid("no methods requested".into()));
        }
        if self.model_rate_hz == 0 {
            return Err(Error::Invalid("model rate must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Invalid("workers must be positive".into()));
        }
        if let Some(s) = self.context_seconds {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Invalid(format!("invalid context length {s}")));
            }
        }
        // training settings that no strategy accepts
        self.fusion_config(Strategy::MeanPool, 1, 1, 2).validate()
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn dataset(&self) -> String {
        self.dataset_id.clone().unwrap_or_else(|| {
            self.manifest
                .parent()
                .and_then(Path::file_name)
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    fn fusion_config(&self, strategy: Strategy, bands: usize, dim: usize, classes: usize) -> FusionConfig {
        let f = &self.fusion;
        FusionConfig {
            seed: self.seed,
            epochs: f.epochs,
            learning_rate: f.learning_rate,
            momentum: f.momentum,
            batch_size: f.batch_size,
            hidden: f.hidden,
            heads: f.heads,
            ..FusionConfig::new(strategy, bands, dim, classes)
        }
    }
}

pub fn make_encoder(spec: &ExperimentSpec) -> Result<Arc<dyn Encoder>> {
    Ok(match &spec.encoder {
        EncoderChoice::Builtin => Arc::new(ReferenceEncoder::new(spec.model_rate_hz)),
        EncoderChoice::External(endpoint) => {
            let mut e = BridgeEncoder::connect(endpoint, spec.model_rate_hz)?;
            if let Some(s) = spec.context_seconds {
                e = e.with_context_seconds(s);
            }
            Arc::new(e)
        }
    })
}

/// Filter banks are costly to design, so one is kept per native rate.
#[derive(Default)]
struct DecomposerPool {
    by_rate: Mutex<HashMap<u32, Arc<Decomposer>>>,
}

impl DecomposerPool {
    fn get(&self, native: u32, model: u32) -> Result<Arc<Decomposer>> {
        if let Some(d) = self.by_rate.lock().expect("decomposer pool").get(&native) {
            return Ok(d.clone());
        }
        let d = Arc::new(Decomposer::for_rates(native, model)?);
        self.by_rate
            .lock()
            .expect("decomposer pool")
            .entry(native)
            .or_insert(d.clone());
        Ok(d)
    }
}

fn compute_features(
    stage: Stage,
    path: &Path,
    encoder: &dyn Encoder,
    model_rate_hz: u32,
    pool: &DecomposerPool,
) -> Result<BandFeatureSet> {
    let clip = load_clip(path)?;
    let fs = clip.sample_rate_hz();
    match stage {
        Stage::Baseband => {
            let band = if fs >= model_rate_hz {
                pool.get(fs, model_rate_hz)?.baseband(&clip)?
            } else {
                to_baseband(&clip, model_rate_hz)?
            };
            Ok(BandFeatureSet::new(vec![encode_functional(&band, encoder)?.vector]))
        }
        Stage::TimeExpansion => {
            let band = time_expand(&clip, model_rate_hz)?;
            Ok(BandFeatureSet::new(vec![encode_functional(&band, encoder)?.vector]))
        }
        Stage::MultiBand => {
            let bands = pool.get(fs, model_rate_hz)?.decompose(&clip)?;
            let mut functionals = Vec::with_capacity(bands.len());
            let mut hc = Vec::with_capacity(bands.len());
            for band in &bands {
                functionals.push(encode_functional(band, encoder)?.vector);
                let h = handcrafted(band);
                hc.push([h.spectral_entropy, h.spectral_flux]);
            }
            Ok(BandFeatureSet::new(functionals).with_handcrafted(hc))
        }
    }
}

/// Labelled features of every manifest entry, in manifest order.
#[derive(Debug, Clone)]
pub struct StageFeatures {
    pub stage: Stage,
    pub splits: Vec<Split>,
    pub features: Vec<BandFeatureSet>,
}

impl StageFeatures {
    pub fn split(&self, split: Split) -> Vec<BandFeatureSet> {
        self.splits
            .iter()
            .zip(&self.features)
            .filter(|(s, _)| **s == split)
            .map(|(_, f)| f.clone())
            .collect()
    }
}

/// Shared state of one experiment run: manifest, encoder, cache and filter
/// banks.
pub struct FeatureExtractor {
    pub spec: ExperimentSpec,
    pub manifest: DatasetManifest,
    encoder: Arc<dyn Encoder>,
    cache: FeatureCache,
    pool: DecomposerPool,
    threads: rayon::ThreadPool,
}

impl FeatureExtractor {
    pub fn new(spec: ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let manifest = load_manifest(&spec.manifest)?;
        let encoder = make_encoder(&spec)?;
        let cache = FeatureCache::open(spec.cache_dir())?;
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = spec.workers {
            builder = builder.num_threads(n);
        }
        let threads = builder
            .build()
            .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
        Ok(Self {
            spec,
            manifest,
            encoder,
            cache,
            pool: DecomposerPool::default(),
            threads,
        })
    }

    pub fn encoder_id(&self) -> String {
        self.encoder.id()
    }

    /// Features of every clip for `stage`, reading and filling the cache.
    /// Clips are processed in parallel; cache writes happen afterwards on
    /// the calling thread.
    pub fn extract(&mut self, stage: Stage) -> Result<StageFeatures> {
        let encoder_id = self.encoder.id();
        let fm = self.spec.model_rate_hz;
        let entries = self.manifest.entries().to_vec();
        let (manifest, cache, pool, encoder) = (&self.manifest, &self.cache, &self.pool, &*self.encoder);
        let results: Vec<Result<(String, bool, BandFeatureSet)>> = self.threads.install(|| {
            entries
                .par_iter()
                .map(|entry| {
                    let path = manifest.resolve(entry);
                    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    let key = cache_key(&bytes, stage.tag(), &encoder_id, fm);
                    if let Some(f) = cache.get(&key) {
                        return Ok((key, false, f));
                    }
                    let f = compute_features(stage, &path, encoder, fm, pool)?;
                    Ok((key, true, f))
                })
                .collect()
        });

        let mut features = Vec::with_capacity(entries.len());
        let mut splits = Vec::with_capacity(entries.len());
        let mut fresh = 0;
        for (entry, result) in entries.iter().zip(results) {
            let (key, is_new, f) = result?;
            if is_new {
                self.cache.put(&key, stage.tag(), &encoder_id, fm, &f)?;
                fresh += 1;
            }
            let label = self
                .manifest
                .label_index(&entry.label)
                .expect("manifest labels are in its vocabulary");
            features.push(f.with_label(label));
            splits.push(entry.split);
        }
        self.cache.flush()?;
        log::info!(
            "{} features: {} clips, {} computed, {} cached",
            stage.tag(),
            entries.len(),
            fresh,
            entries.len() - fresh
        );
        check_consistent(&features)?;
        Ok(StageFeatures {
            stage,
            splits,
            features,
        })
    }
}

fn check_consistent(features: &[BandFeatureSet]) -> Result<()> {
    if let Some(first) = features.first() {
        for f in features {
            f.check_shape()?;
            if f.band_count() != first.band_count() || f.dim() != first.dim() {
                return Err(Error::Shape(format!(
                    "clips yield {} x {} and {} x {} functionals; all clips of a run must share one native rate",
                    first.band_count(),
                    first.dim(),
                    f.band_count(),
                    f.dim()
                )));
            }
        }
    }
    Ok(())
}

/// Z-scoring fitted on Train only: functionals pooled across bands, and
/// handcrafted features separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub functionals: Standardizer,
    pub handcrafted: Option<Standardizer>,
}

impl FeatureScaler {
    pub fn fit(train: &[BandFeatureSet]) -> Result<Self> {
        let functionals = Standardizer::fit(train.iter().flat_map(|f| f.functionals.iter().map(Vec::as_slice)))?;
        let handcrafted = if train.iter().all(|f| f.handcrafted.is_some()) {
            Some(Standardizer::fit(
                train
                    .iter()
                    .flat_map(|f| f.handcrafted.iter().flatten().map(|p| p.as_slice())),
            )?)
        } else {
            None
        };
        Ok(Self {
            functionals,
            handcrafted,
        })
    }

    pub fn apply(&self, set: &mut [BandFeatureSet]) {
        for f in set {
            f.functionals.iter_mut().for_each(|v| self.functionals.apply(v));
            if let (Some(s), Some(h)) = (&self.handcrafted, f.handcrafted.as_mut()) {
                h.iter_mut().for_each(|p| s.apply(p));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: Method,
    pub encoder: String,
    pub dataset: String,
    /// Percent.
    pub test_accuracy: f64,
    /// Percent; absent when the manifest has no Val split.
    pub val_accuracy: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainRow {
    pub method: Method,
    pub encoder: String,
    pub dataset: String,
    /// Percentage points over the matching BB row.
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct MethodFailure {
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<MethodFailure>,
}

/// A trained probe or fusion model with the scaler fitted for it.
pub struct TrainedMethod {
    pub method: Method,
    pub model: FusionModel,
    pub scaler: FeatureScaler,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: f64,
}

/// Trains `method` on Train, selects its checkpoint on Val and scores Test.
pub fn train_method(
    method: Method,
    spec: &ExperimentSpec,
    features: &StageFeatures,
    class_count: usize,
) -> Result<TrainedMethod> {
    if features.stage != method.stage() {
        return Err(Error::Invalid(format!(
            "{method} needs {} features, got {}",
            method.stage().tag(),
            features.stage.tag()
        )));
    }
    let mut train = features.split(Split::Train);
    let mut val = features.split(Split::Val);
    let mut test = features.split(Split::Test);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Invalid("manifest needs Train and Test clips".into()));
    }
    let scaler = FeatureScaler::fit(&train)?;
    for set in [&mut train, &mut val, &mut test] {
        scaler.apply(set);
    }
    let strategy = method.fusion().unwrap_or(Strategy::MeanPool);
    let cfg = spec.fusion_config(strategy, train[0].band_count(), train[0].dim(), class_count);
    let model = fusion::train(cfg, &train, &val)?;
    let val_accuracy = if val.is_empty() {
        None
    } else {
        Some(100.0 * fusion::accuracy(&model, &val)?)
    };
    let test_accuracy = 100.0 * fusion::accuracy(&model, &test)?;
    Ok(TrainedMethod {
        method,
        model,
        scaler,
        val_accuracy,
        test_accuracy,
    })
}

/// Runs every requested method. A failing stage or method is recorded in
/// the report and does not stop the others; an unreadable manifest,
/// unreachable encoder or unwritable output directory is an error.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let mut extractor = FeatureExtractor::new(spec.clone())?;
    let encoder_id = extractor.encoder_id();
    let dataset = spec.dataset();
    let class_count = extractor.manifest.class_count();
    let ck_dir = spec.output_dir.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;

    let mut stages: BTreeMap<Stage, (std::result::Result<StageFeatures, String>, f64)> = BTreeMap::new();
    let mut report = ExperimentReport::default();
    let mut methods = spec.methods.clone();
    methods.dedup();
    for method in methods {
        let stage = method.stage();
        stages.entry(stage).or_insert_with(|| {
            let t = Instant::now();
            let r = extractor.extract(stage).map_err(|e| e.to_string());
            (r, t.elapsed().as_secs_f64())
        });
        let (features, extract_s) = &stages[&stage];
        let features = match features {
            Ok(f) => f,
            Err(e) => {
                report.failures.push(MethodFailure {
                    method,
                    error: format!("{} features: {e}", stage.tag()),
                });
                continue;
            }
        };
        let t = Instant::now();
        match train_method(method, spec, features, class_count) {
            Ok(trained) => {
                let path = ck_dir.join(format!("{}.json", method.tag()));
                trained.model.save(&path)?;
                log::info!(
                    "{method}: test {:.1}% val {:?}",
                    trained.test_accuracy,
                    trained.val_accuracy
                );
                report.rows.push(ResultRow {
                    method,
                    encoder: encoder_id.clone(),
                    dataset: dataset.clone(),
                    test_accuracy: trained.test_accuracy,
                    val_accuracy: trained.val_accuracy,
                    wall_time_s: extract_s + t.elapsed().as_secs_f64(),
                });
            }
            Err(e) => {
                log::error!("{method} failed: {e}");
                report.failures.push(MethodFailure {
                    method,
                    error: e.to_string(),
                })
            }
        }
    }

    write_results(spec.output_dir.join(RESULTS_FILE), &report.rows)?;
    if report.rows.iter().any(|r| r.method == Method::Baseband) {
        write_gains(spec.output_dir.join(GAIN_FILE), &gain_over_baseband(&report.rows)?)?;
    }
    Ok(report)
}

/// Accuracy gain of every non-BB row over the BB row of the same encoder
/// and dataset.
pub fn gain_over_baseband(rows: &[ResultRow]) -> Result<Vec<GainRow>> {
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.method != Method::Baseband) {
        let base = rows
            .iter()
            .find(|b| b.method == Method::Baseband && b.encoder == r.encoder && b.dataset == r.dataset)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "no BB row for encoder {} on dataset {}",
                    r.encoder, r.dataset
                ))
            })?;
        out.push(GainRow {
            method: r.method,
            encoder: r.encoder.clone(),
            dataset: r.dataset.clone(),
            gain: r.test_accuracy - base.test_accuracy,
        });
    }
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_results(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

pub fn write_gains(path: impl AsRef<Path>, rows: &[GainRow]) -> Result<()> {
    write_csv(path.as_ref(), rows)
}

/// Representation analyses over the Train split.
#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub similarity: Option<SimilarityReport>,
    pub separation: Vec<(String, SeparationReport)>,
}

/// Band-vs-baseband similarity of the multi-band functionals, and class
/// separation of the BB and TE functionals and of the fused vectors of
/// every fusion checkpoint found under the output directory. Writes both
/// CSV files into the output directory.
pub fn analyze_experiment(spec: &ExperimentSpec) -> Result<AnalysisReport> {
    let mut extractor = FeatureExtractor::new(spec.clone())?;
    let mut report = AnalysisReport {
        similarity: None,
        separation: Vec::new(),
    };
    let stages: Vec<Stage> = {
        let mut s: Vec<Stage> = spec.methods.iter().map(|m| m.stage()).collect();
        s.sort();
        s.dedup();
        s
    };
    for stage in stages {
        let features = extractor.extract(stage)?;
        let mut train = features.split(Split::Train);
        if stage == Stage::MultiBand {
            report.similarity = Some(analysis::band_similarity(&train)?);
        }
        let scaler = FeatureScaler::fit(&train)?;
        scaler.apply(&mut train);
        let labelled = |vectors: Vec<Vec<f64>>| -> Vec<(Vec<f64>, usize)> {
            vectors
                .into_iter()
                .zip(&train)
                .map(|(v, f)| (v, f.label.expect("labelled")))
                .collect()
        };
        if stage != Stage::MultiBand {
            let v = labelled(train.iter().map(|f| f.functionals[0].clone()).collect());
            report.separation.push((stage.tag().to_string(), analysis::class_separation(&v)?));
            continue;
        }
        for method in spec.methods.iter().filter(|m| m.stage() == Stage::MultiBand) {
            let path = spec.output_dir.join(CHECKPOINT_DIR).join(format!("{}.json", method.tag()));
            if !path.exists() {
                log::warn!("no checkpoint for {method} at {}; skipped", path.display());
                continue;
            }
            let model = FusionModel::load(&path)?;
            let fused = train
                .iter()
                .map(|f| model.fused_representation(f))
                .collect::<Result<Vec<_>>>()?;
            report
                .separation
                .push((method.tag().to_string(), analysis::class_separation(&labelled(fused))?));
        }
    }
    std::fs::create_dir_all(&spec.output_dir).map_err(|e| Error::io(&spec.output_dir, e))?;
    if let Some(s) = &report.similarity {
        analysis::write_band_similarity(spec.output_dir.join(analysis::BAND_SIMILARITY_FILE), s)?;
    }
    analysis::write_class_separation(
        spec.output_dir.join(analysis::CLASS_SEPARATION_FILE),
        &report.separation,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, acc: f64) -> ResultRow {
        ResultRow {
            method,
            encoder: "e".into(),
            dataset: "d".into(),
            test_accuracy: acc,
            val_accuracy: None,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn gains() {
        let g = gain_over_baseband(&[row(Method::Baseband, 60.0), row(Method::TimeExpansion, 70.0)]).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].gain, 10.0);

        let g = gain_over_baseband(&[
            row(Method::Baseband, 55.0),
            row(Method::MeanPool, 55.0),
            row(Method::GatedPool, 80.0),
            row(Method::SelfAttention, 40.0),
        ])
        .unwrap();
        assert_eq!(g.iter().map(|r| r.gain).collect::<Vec<_>>(), [0.0, 25.0, -15.0]);

        assert!(gain_over_baseband(&[row(Method::MeanPool, 50.0)]).is_err());
    }

    #[test]
    fn spec_json_round_trip_and_validation() {
        let text = r#"{"manifest": "m.csv", "methods": ["BB", "MoE", "hyb"], "output_dir": "out",
                       "encoder": "tcp://127.0.0.1:9000", "fusion": {"epochs": 3}}"#;
        assert!(serde_json::from_str::<ExperimentSpec>(text).is_err());
        let text = text.replace("\"hyb\"", "\"HYB\"");
        let spec: ExperimentSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(
            spec.methods,
            [Method::Baseband, Method::MixtureOfExperts, Method::Hybrid]
        );
        assert_eq!(spec.encoder, EncoderChoice::External("tcp://127.0.0.1:9000".into()));
        assert_eq!(spec.fusion.epochs, 3);
        assert_eq!(spec.fusion.learning_rate, 1e-2);
        assert_eq!(spec.model_rate_hz, 16_000);
        let back: ExperimentSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);

        let mut bad = spec.clone();
        bad.methods.clear();
        assert!(bad.validate().is_err());
        assert!("http://x".parse::<EncoderChoice>().is_err());
        assert!(serde_json::from_str::<ExperimentSpec>(r#"{"manifest":"m","methods":[],"output_dir":"o","bogus":1}"#).is_err());
    }

    #[test]
    fn spec_paths_resolve_against_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        std::fs::write(&path, r#"{"manifest": "data/m.csv", "methods": ["BB"], "output_dir": "out"}"#).unwrap();
        let spec = ExperimentSpec::load(&path).unwrap();
        assert_eq!(spec.manifest, dir.path().join("data/m.csv"));
        assert_eq!(spec.cache_dir(), dir.path().join("out/cache"));
        assert_eq!(spec.dataset(), "data");
    }

    #[test]
    fn method_tags() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.tag()));
        }
    }

    #[test]
    fn scaler_uses_train_statistics_only() {
        let train = vec![
            BandFeatureSet::new(vec![vec![0.0, 10.0], vec![2.0, 10.0]]),
            BandFeatureSet::new(vec![vec![4.0, 10.0], vec![6.0, 10.0]]),
        ];
        let s = FeatureScaler::fit(&train).unwrap();
        assert_eq!(s.functionals.mean, [3.0, 10.0]);
        assert_eq!(s.functionals.scale[1], 1.0);
        assert!(s.handcrafted.is_none());
        let mut test = vec![BandFeatureSet::new(vec![vec![3.0, 11.0], vec![3.0, 9.0]])];
        s.apply(&mut test);
        assert_eq!(test[0].functionals, [vec![0.0, 1.0], vec![0.0, -1.0]]);
    }
}

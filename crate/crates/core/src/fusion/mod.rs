//! Fusion of band functionals and the linear classifier trained on top.
//!
//! Five strategies are supported:
//!
//! | tag   | fused quantity                                   | learnable parts                 |
//! |-------|--------------------------------------------------|---------------------------------|
//! | `MP`  | mean of `f_b`                                    | head                            |
//! | `GP`  | `sum_b softmax(g.f_b + g0)_b f_b`                | linear gate, head               |
//! | `MoE` | `sum_b w_b (W_b f_b + c_b)` (logits)             | `B` heads, `D->H->1` gate       |
//! | `HYB` | `sum_b w_b f_b`, gate on `[f_b, entropy, flux]`  | `D+2->H->H->1` gate, head       |
//! | `SA`  | CLS output of one transformer encoder layer      | CLS, positions, layer, head     |
//!
//! Gradients are written out by hand; [`FusionModel::loss_and_gradients`]
//! is the single entry point used by training and by the finite-difference
//! checks.

mod attention;
mod moe;
pub mod nn;
mod params;
mod pooling;
mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use params::{ParamSet, Tensor};
pub use train::{accuracy, train, train_report, EpochStats, TrainReport};

use crate::encoder::{Functional, HandcraftedFeatures};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
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

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::MeanPool,
        Strategy::GatedPool,
        Strategy::MixtureOfExperts,
        Strategy::Hybrid,
        Strategy::SelfAttention,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::MeanPool => "MP",
            Strategy::GatedPool => "GP",
            Strategy::MixtureOfExperts => "MoE",
            Strategy::Hybrid => "HYB",
            Strategy::SelfAttention => "SA",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown fusion strategy {s:?}")))
    }
}

fn default_epochs() -> usize {
    20
}
fn default_learning_rate() -> f64 {
    1e-2
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch_size() -> usize {
    32
}
fn default_hidden() -> usize {
    64
}
fn default_heads() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub strategy: Strategy,
    pub band_count: usize,
    pub dim: usize,
    pub class_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Hidden width of the MoE and hybrid gate MLPs.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Attention heads for `SA`; must divide `dim`.
    #[serde(default = "default_heads")]
    pub heads: usize,
}

impl FusionConfig {
    pub fn new(strategy: Strategy, band_count: usize, dim: usize, class_count: usize) -> Self {
        Self {
            strategy,
            band_count,
            dim,
            class_count,
            seed: 0,
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            momentum: default_momentum(),
            batch_size: default_batch_size(),
            hidden: default_hidden(),
            heads: default_heads(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.band_count == 0 || self.dim == 0 {
            return bad("band count and dimension must be positive".into());
        }
        if self.class_count < 2 {
            return bad(format!("need at least 2 classes, got {}", self.class_count));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("invalid learning rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if matches!(self.strategy, Strategy::MixtureOfExperts | Strategy::Hybrid) && self.hidden == 0 {
            return bad("gate hidden width must be positive".into());
        }
        if self.strategy == Strategy::SelfAttention && (self.heads == 0 || !self.dim.is_multiple_of(self.heads)) {
            return bad(format!("{} heads do not divide dimension {}", self.heads, self.dim));
        }
        Ok(())
    }
}

/// Band functionals of one clip, with optional handcrafted features and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFeatureSet {
    /// `B` rows of length `D`.
    pub functionals: Vec<Vec<f64>>,
    /// `B` rows of `[spectral_entropy, spectral_flux]`.
    pub handcrafted: Option<Vec<[f64; 2]>>,
    pub label: Option<usize>,
}

impl BandFeatureSet {
    pub fn new(functionals: Vec<Vec<f64>>) -> Self {
        Self {
            functionals,
            handcrafted: None,
            label: None,
        }
    }

    pub fn from_functionals(functionals: &[Functional], handcrafted: Option<&[HandcraftedFeatures]>) -> Result<Self> {
        let set = Self {
            functionals: functionals.iter().map(|f| f.vector.clone()).collect(),
            handcrafted: handcrafted.map(|h| h.iter().map(|h| [h.spectral_entropy, h.spectral_flux]).collect()),
            label: None,
        };
        set.check_shape()?;
        Ok(set)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_handcrafted(mut self, rows: Vec<[f64; 2]>) -> Self {
        self.handcrafted = Some(rows);
        self
    }

    pub fn band_count(&self) -> usize {
        self.functionals.len()
    }

    pub fn dim(&self) -> usize {
        self.functionals.first().map_or(0, Vec::len)
    }

    /// Rejects ragged or non-finite inputs.
    pub fn check_shape(&self) -> Result<()> {
        let d = self.dim();
        if self.functionals.is_empty() || d == 0 {
            return Err(Error::Shape("feature set has no band functionals".into()));
        }
        if self.functionals.iter().any(|f| f.len() != d) {
            return Err(Error::Shape("band functionals of differing dimension".into()));
        }
        if self.functionals.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite functional".into()));
        }
        if let Some(h) = &self.handcrafted {
            if h.len() != self.functionals.len() {
                return Err(Error::Shape(format!(
                    "{} handcrafted rows for {} bands",
                    h.len(),
                    self.functionals.len()
                )));
            }
        }
        Ok(())
    }
}

/// Mean over bands; no parameters.
pub fn fuse_mean_pool(features: &BandFeatureSet) -> Result<Functional> {
    features.check_shape()?;
    Ok(Functional::new(pooling::mean_pool(features), 0))
}

fn expect_strategy(model: &FusionModel, strategy: Strategy) -> Result<()> {
    if model.config.strategy != strategy {
        return Err(Error::Invalid(format!(
            "model is {}, expected {}",
            model.config.strategy, strategy
        )));
    }
    Ok(())
}

/// Softmax-gated sum of band functionals.
pub fn fuse_gated_pool(features: &BandFeatureSet, model: &FusionModel) -> Result<Functional> {
    expect_strategy(model, Strategy::GatedPool)?;
    Ok(Functional::new(model.fused_representation(features)?, 0))
}

/// Gate-weighted sum of per-band expert logits.
pub fn fuse_moe(features: &BandFeatureSet, model: &FusionModel) -> Result<Vec<f64>> {
    expect_strategy(model, Strategy::MixtureOfExperts)?;
    model.logits(features)
}

/// Gated sum whose gate also sees spectral entropy and flux.
pub fn fuse_hybrid(features: &BandFeatureSet, model: &FusionModel) -> Result<Functional> {
    expect_strategy(model, Strategy::Hybrid)?;
    Ok(Functional::new(model.fused_representation(features)?, 0))
}

/// CLS output of the transformer layer.
pub fn fuse_self_attention(features: &BandFeatureSet, model: &FusionModel) -> Result<Functional> {
    expect_strategy(model, Strategy::SelfAttention)?;
    Ok(Functional::new(model.fused_representation(features)?, 0))
}

enum Trace {
    MeanPool,
    Gated(pooling::GatedTrace),
    Moe(moe::MoeTrace),
    Hybrid(pooling::HybridTrace),
    Attention(Box<attention::AttentionTrace>),
}

/// Prediction of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub params: ParamSet,
}

pub const CHECKPOINT_FORMAT: &str = "multiband-fusion-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: FusionConfig,
    tensors: Vec<Tensor>,
}

impl FusionModel {
    /// Initializes parameters from `config.seed`. The classifier head (or the
    /// MoE experts) draws from its own stream so every strategy starts from
    /// the same head for the same seed.
    pub fn init(config: FusionConfig) -> Result<Self> {
        config.validate()?;
        let (b, d, c, h) = (config.band_count, config.dim, config.class_count, config.hidden);
        let mut head_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);

        let mut tensors = Vec::new();
        let head = |rng: &mut ChaCha8Rng| {
            vec![
                Tensor::uniform("head.weight", &[c, d], d, rng),
                Tensor::zeros("head.bias", &[c]),
            ]
        };
        match config.strategy {
            Strategy::MeanPool => tensors.extend(head(&mut head_rng)),
            Strategy::GatedPool => {
                tensors.extend(head(&mut head_rng));
                tensors.push(Tensor::zeros("gate.weight", &[1, d]));
                tensors.push(Tensor::zeros("gate.bias", &[1]));
            }
            Strategy::MixtureOfExperts => {
                tensors.push(Tensor::uniform("experts.weight", &[b, c, d], d, &mut head_rng));
                tensors.push(Tensor::zeros("experts.bias", &[b, c]));
                tensors.push(Tensor::uniform("gate.w1", &[h, d], d, &mut rng));
                tensors.push(Tensor::zeros("gate.b1", &[h]));
                tensors.push(Tensor::zeros("gate.w2", &[1, h]));
                tensors.push(Tensor::zeros("gate.b2", &[1]));
            }
            Strategy::Hybrid => {
                tensors.extend(head(&mut head_rng));
                tensors.push(Tensor::uniform("gate.w1", &[h, d + 2], d + 2, &mut rng));
                tensors.push(Tensor::zeros("gate.b1", &[h]));
                tensors.push(Tensor::uniform("gate.w2", &[h, h], h, &mut rng));
                tensors.push(Tensor::zeros("gate.b2", &[h]));
                tensors.push(Tensor::zeros("gate.w3", &[1, h]));
                tensors.push(Tensor::zeros("gate.b3", &[1]));
            }
            Strategy::SelfAttention => {
                tensors.extend(head(&mut head_rng));
                tensors.push(Tensor::uniform("cls", &[d], d, &mut rng));
                tensors.push(Tensor::uniform("pos", &[b + 1, d], d, &mut rng));
                tensors.push(Tensor::filled("ln1.gamma", &[d], 1.0));
                tensors.push(Tensor::zeros("ln1.beta", &[d]));
                for name in ["q", "k", "v", "o"] {
                    tensors.push(Tensor::uniform(&format!("attn.w{name}"), &[d, d], d, &mut rng));
                    tensors.push(Tensor::zeros(&format!("attn.b{name}"), &[d]));
                }
                tensors.push(Tensor::filled("ln2.gamma", &[d], 1.0));
                tensors.push(Tensor::zeros("ln2.beta", &[d]));
                tensors.push(Tensor::uniform("ff.w1", &[2 * d, d], d, &mut rng));
                tensors.push(Tensor::zeros("ff.b1", &[2 * d]));
                tensors.push(Tensor::uniform("ff.w2", &[d, 2 * d], 2 * d, &mut rng));
                tensors.push(Tensor::zeros("ff.b2", &[d]));
            }
        }
        Ok(Self {
            config,
            params: ParamSet::new(tensors),
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    /// Checks a feature set against the model's geometry.
    pub fn check_features(&self, features: &BandFeatureSet) -> Result<()> {
        features.check_shape()?;
        if features.band_count() != self.config.band_count || features.dim() != self.config.dim {
            return Err(Error::Shape(format!(
                "features are {} x {}, model expects {} x {}",
                features.band_count(),
                features.dim(),
                self.config.band_count,
                self.config.dim
            )));
        }
        if self.config.strategy == Strategy::Hybrid && features.handcrafted.is_none() {
            return Err(Error::Invalid("hybrid fusion needs handcrafted features".into()));
        }
        if let Some(label) = features.label {
            if label >= self.config.class_count {
                return Err(Error::Shape(format!(
                    "label {label} out of range for {} classes",
                    self.config.class_count
                )));
            }
        }
        Ok(())
    }

    fn head_logits(&self, x: &[f64]) -> Vec<f64> {
        nn::affine(self.params.get("head.weight"), self.params.get("head.bias"), x)
    }

    /// Returns `(logits, fused representation, trace)`.
    fn forward(&self, features: &BandFeatureSet) -> (Vec<f64>, Vec<f64>, Trace) {
        match self.config.strategy {
            Strategy::MeanPool => {
                let x = pooling::mean_pool(features);
                (self.head_logits(&x), x, Trace::MeanPool)
            }
            Strategy::GatedPool => {
                let t = pooling::gated_weights(&self.params, features);
                let x = pooling::weighted_sum(&t.weights, features);
                (self.head_logits(&x), x, Trace::Gated(t))
            }
            Strategy::Hybrid => {
                let t = pooling::hybrid_weights(&self.params, features);
                let x = pooling::weighted_sum(&t.weights, features);
                (self.head_logits(&x), x, Trace::Hybrid(t))
            }
            Strategy::MixtureOfExperts => {
                let (logits, t) = moe::forward(&self.params, features, self.config.class_count);
                let x = pooling::weighted_sum(&t.weights, features);
                (logits, x, Trace::Moe(t))
            }
            Strategy::SelfAttention => {
                let t = attention::forward(&self.params, features, self.config.heads);
                let x = t.output.clone();
                (self.head_logits(&x), x, Trace::Attention(Box::new(t)))
            }
        }
    }

    fn backward(&self, features: &BandFeatureSet, x: &[f64], trace: &Trace, dlogits: &[f64], grads: &mut ParamSet) {
        if let Trace::Moe(t) = trace {
            moe::backward(&self.params, t, features, dlogits, grads);
            return;
        }
        {
            let (dw, db) = pooling::split_pair(grads, "head.weight", "head.bias");
            nn::affine_param_grad(dw, db, dlogits, x);
        }
        let mut dx = vec![0.0; x.len()];
        nn::affine_input_grad(self.params.get("head.weight"), dlogits, &mut dx);
        match trace {
            Trace::MeanPool | Trace::Moe(_) => {}
            Trace::Gated(t) => pooling::gated_backward(t, features, &dx, grads),
            Trace::Hybrid(t) => pooling::hybrid_backward(&self.params, t, features, &dx, grads),
            Trace::Attention(t) => attention::backward(&self.params, t, self.config.heads, &dx, grads),
        }
    }

    pub fn logits(&self, features: &BandFeatureSet) -> Result<Vec<f64>> {
        self.check_features(features)?;
        Ok(self.forward(features).0)
    }

    /// The fused vector `x`. For MoE, which fuses logits, this is the
    /// gate-weighted mixture of the band functionals.
    pub fn fused_representation(&self, features: &BandFeatureSet) -> Result<Vec<f64>> {
        self.check_features(features)?;
        Ok(self.forward(features).1)
    }

    /// Band weights of the gated strategies; `None` for MP and SA.
    pub fn gate_weights(&self, features: &BandFeatureSet) -> Result<Option<Vec<f64>>> {
        self.check_features(features)?;
        Ok(match self.forward(features).2 {
            Trace::Gated(t) => Some(t.weights),
            Trace::Hybrid(t) => Some(t.weights),
            Trace::Moe(t) => Some(t.weights),
            Trace::MeanPool | Trace::Attention(_) => None,
        })
    }

    /// Per-head attention of the CLS query over `[CLS, bands...]` (SA only).
    pub fn attention_weights(&self, features: &BandFeatureSet) -> Result<Option<Vec<Vec<f64>>>> {
        self.check_features(features)?;
        Ok(match self.forward(features).2 {
            Trace::Attention(t) => Some(t.attention().to_vec()),
            _ => None,
        })
    }

    /// Inputs of every ReLU unit in the forward pass. Finite-difference
    /// checks are only meaningful when none of these sits near zero.
    pub fn relu_inputs(&self, features: &BandFeatureSet) -> Result<Vec<f64>> {
        self.check_features(features)?;
        let p = &self.params;
        let mut out = Vec::new();
        match self.forward(features).2 {
            Trace::MeanPool | Trace::Gated(_) => {}
            Trace::Moe(_) => {
                for f in &features.functionals {
                    out.extend(nn::affine(p.get("gate.w1"), p.get("gate.b1"), f));
                }
            }
            Trace::Hybrid(t) => {
                for (u, h1) in t.inputs.iter().zip(&t.hidden1) {
                    out.extend(nn::affine(p.get("gate.w1"), p.get("gate.b1"), u));
                    out.extend(nn::affine(p.get("gate.w2"), p.get("gate.b2"), h1));
                }
            }
            Trace::Attention(t) => out.extend(t.relu_inputs(p)),
        }
        Ok(out)
    }

    /// Argmax class (lowest index on ties) and softmax probabilities.
    pub fn predict(&self, features: &BandFeatureSet) -> Result<Prediction> {
        let logits = self.logits(features)?;
        let probabilities = nn::softmax(&logits);
        let mut class = 0;
        for (i, l) in logits.iter().enumerate() {
            if *l > logits[class] {
                class = i;
            }
        }
        Ok(Prediction { class, probabilities })
    }

    /// Mean cross-entropy over a labelled batch.
    pub fn loss(&self, batch: &[&BandFeatureSet]) -> Result<f64> {
        let mut total = 0.0;
        for f in batch {
            let label = labelled(f)?;
            total -= nn::log_prob(&self.logits(f)?, label);
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// Mean cross-entropy over a labelled batch and its gradient with
    /// respect to every parameter tensor.
    pub fn loss_and_gradients(&self, batch: &[&BandFeatureSet]) -> Result<(f64, ParamSet)> {
        let mut grads = self.params.zeros_like();
        let mut total = 0.0;
        for f in batch {
            self.check_features(f)?;
            let label = labelled(f)?;
            let (logits, x, trace) = self.forward(f);
            total -= nn::log_prob(&logits, label);
            let mut dlogits = nn::softmax(&logits);
            dlogits[label] -= 1.0;
            self.backward(f, &x, &trace, &dlogits, &mut grads);
        }
        let n = batch.len().max(1) as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors: self.params.tensors.clone(),
        };
        let json = serde_json::to_string_pretty(&ck)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        let reference = Self::init(ck.config.clone())?;
        let params = ParamSet::new(ck.tensors);
        params.check_layout(&reference.params)?;
        if !params.all_finite() {
            return Err(Error::Invalid(format!("{}: non-finite parameters", path.display())));
        }
        Ok(Self {
            config: ck.config,
            params,
        })
    }
}

fn labelled(f: &BandFeatureSet) -> Result<usize> {
    f.label
        .ok_or_else(|| Error::Invalid("training example without a label".into()))
}

//! Mini-batch SGD with heavy-ball momentum and best-validation selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{BandFeatureSet, FusionConfig, FusionModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: FusionModel,
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept; 0 means the initial parameters.
    pub best_epoch: usize,
}

/// Fraction of `set` whose argmax prediction equals the label.
pub fn accuracy(model: &FusionModel, set: &[BandFeatureSet]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Invalid("accuracy of an empty set".into()));
    }
    let mut correct = 0usize;
    for f in set {
        let label = f
            .label
            .ok_or_else(|| Error::Invalid("evaluation example without a label".into()))?;
        if model.predict(f)?.class == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

pub fn train(config: FusionConfig, train_set: &[BandFeatureSet], val_set: &[BandFeatureSet]) -> Result<FusionModel> {
    Ok(train_report(config, train_set, val_set)?.model)
}

/// Trains from `config.seed` and returns the checkpoint with the best
/// validation accuracy (earliest on ties). Without a validation set the
/// training accuracy is used instead.
pub fn train_report(
    config: FusionConfig,
    train_set: &[BandFeatureSet],
    val_set: &[BandFeatureSet],
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut model = FusionModel::init(config)?;
    for f in train_set.iter().chain(val_set) {
        model.check_features(f)?;
        if f.label.is_none() {
            return Err(Error::Invalid("training example without a label".into()));
        }
    }
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut velocity = model.params.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let select = |m: &FusionModel| -> Result<f64> {
        if val_set.is_empty() {
            accuracy(m, train_set)
        } else {
            accuracy(m, val_set)
        }
    };
    let mut best = model.clone();
    let mut best_score = select(&model)?;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&BandFeatureSet> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = model.loss_and_gradients(&batch)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no + 1,
                });
            }
            loss_sum += loss * batch.len() as f64;
            for ((p, v), g) in model.params.values_mut().zip(velocity.values_mut()).zip(grads.values()) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
            if !model.params.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no + 1,
                });
            }
        }
        let train_accuracy = accuracy(&model, train_set)?;
        let val_accuracy = if val_set.is_empty() {
            None
        } else {
            Some(accuracy(&model, val_set)?)
        };
        let score = val_accuracy.unwrap_or(train_accuracy);
        log::debug!(
            "{} epoch {epoch}: loss {:.4} train {:.3} val {:?}",
            cfg.strategy,
            loss_sum / train_set.len() as f64,
            train_accuracy,
            val_accuracy
        );
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy,
            val_accuracy,
        });
        if score > best_score {
            best_score = score;
            best_epoch = epoch;
            best = model.clone();
        }
    }
    Ok(TrainReport {
        model: best,
        history,
        best_epoch,
    })
}

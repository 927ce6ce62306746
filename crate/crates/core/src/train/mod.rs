//! Focal-loss training with best-validation checkpointing, evaluation, and
//! stratified k-fold runs.

mod clips;
mod kfold;
mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, RgbImage};
use crate::metrics::{focal_loss_op, FocalParams, MetricsError, MetricsRecord, Split};
use crate::model::{
    ensemble_predict, frames_to_batch, is_trainable, predict_video, EnsembleConfig, ModelError, ModelWeights, Network,
};
use crate::nn::{sigmoid, NormMode, DEFAULT_MOMENTUM};
use crate::tensor::{Tape, Tensor, TensorError};

pub use clips::{Access, ClipSource, InMemoryClips};
pub use kfold::{kfold_split, run_kfold, FoldAssignment, FoldResult, KFoldReport, KFoldSummary};
pub use optim::{Optimizer, OptimizerState};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence { epoch: usize, batch: usize, detail: String },
    #[error("{0} set is empty")]
    EmptySplit(&'static str),
    #[error("k-fold: {0}")]
    KFold(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    BestValLogLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Videos per minibatch; each contributes `n_frames` frames.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub focal: FocalParams,
    pub n_frames: usize,
    pub k_folds: usize,
    pub seed: u64,
    pub checkpoint_policy: CheckpointPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            focal: FocalParams::default(),
            n_frames: 5,
            k_folds: 5,
            seed: 0,
            checkpoint_policy: CheckpointPolicy::BestValLogLoss,
        }
    }
}

/// Named run presets: `(epochs, batch_size, n_frames)`.
pub const RUN_PRESETS: [(&str, usize, usize, usize); 2] = [("fig2", 100, 32, 5), ("fig5", 300, 64, 6)];

impl TrainConfig {
    /// Overrides epochs, batch size and frame count with a named preset.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let &(_, epochs, batch_size, n_frames) = RUN_PRESETS
            .iter()
            .find(|p| p.0 == name)
            .ok_or_else(|| TrainError::Config(format!("unknown run preset '{name}' (expected fig2 or fig5)")))?;
        self.epochs = epochs;
        self.batch_size = batch_size;
        self.n_frames = n_frames;
        Ok(())
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_preset(name)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.n_frames == 0 {
            return bad("frames per video must be at least 1".into());
        }
        if self.k_folds < 2 {
            return bad(format!("k must be at least 2, got {}", self.k_folds));
        }
        self.optimizer.validate().map_err(TrainError::Config)?;
        self.focal.validate().map_err(|e| TrainError::Config(e.to_string()))
    }
}

/// Per-epoch train/validation records; epochs are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epochs: Vec<(MetricsRecord, MetricsRecord)>,
    pub best_epoch: usize,
}

impl EpochLog {
    /// Builds a log and selects the epoch with the lowest validation log
    /// loss, earliest on ties.
    pub fn new(epochs: Vec<(MetricsRecord, MetricsRecord)>) -> Self {
        let best_epoch = best_epoch(&epochs);
        Self { epochs, best_epoch }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn best(&self) -> &(MetricsRecord, MetricsRecord) {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn last(&self) -> &(MetricsRecord, MetricsRecord) {
        self.epochs.last().expect("log is nonempty")
    }
}

fn best_epoch(epochs: &[(MetricsRecord, MetricsRecord)]) -> usize {
    let mut best = 0;
    for (i, (_, val)) in epochs.iter().enumerate() {
        if val.log_loss < epochs[best].1.log_loss {
            best = i;
        }
    }
    best + 1
}

/// Fake probability per video: each member's `predict_video`, combined by
/// soft vote when there are two members.
pub fn predict_clips(
    models: &[Network<f32>],
    ensemble: &EnsembleConfig,
    set: &dyn ClipSource,
    n_frames: usize,
) -> Result<Vec<f64>> {
    (0..set.len())
        .map(|i| {
            let clip = set.clip(i, Access::Evaluation);
            let probs = models
                .iter()
                .map(|m| predict_video(m, clip, n_frames))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(match probs.as_slice() {
                [p] => *p,
                [p_resnet, p_xception] => ensemble_predict(*p_resnet, *p_xception, ensemble)?,
                _ => {
                    return Err(TrainError::Config(format!(
                        "expected one or two models, got {}",
                        models.len()
                    )))
                }
            })
        })
        .collect()
}

/// Scores `set` without touching any weights.
pub fn evaluate(
    models: &[Network<f32>],
    ensemble: &EnsembleConfig,
    set: &dyn ClipSource,
    cfg: &TrainConfig,
    epoch: usize,
    split: Split,
) -> Result<MetricsRecord> {
    if set.is_empty() {
        return Err(TrainError::EmptySplit(match split {
            Split::Train => "train",
            Split::Validation => "validation",
        }));
    }
    let probs = predict_clips(models, ensemble, set, cfg.n_frames)?;
    let labels: Vec<f64> = (0..set.len()).map(|i| set.label(i)).collect();
    Ok(MetricsRecord::compute(epoch, split, &probs, &labels, &cfg.focal)?)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of each model at the best epoch.
    pub best_weights: Vec<ModelWeights<f32>>,
    pub log: EpochLog,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One optimizer step on one model. Returns a description of the problem
/// when the loss or any updated weight is not finite.
fn train_step(
    model: &mut Network<f32>,
    state: &mut OptimizerState<f32>,
    batch: &Tensor<f32>,
    labels: &[f32],
    cfg: &TrainConfig,
) -> Result<Option<String>> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let x = tape.constant(batch.clone());
    let pass = model.forward(&mut tape, &vars, x, NormMode::Training)?;
    let probs = sigmoid(&mut tape, pass.logits);
    let loss = focal_loss_op(&mut tape, probs, labels, &cfg.focal)?;
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Ok(Some(format!("loss is {value}")));
    }
    let grads = tape.backward(loss)?;
    let trainable: Vec<usize> = (0..vars.len())
        .filter(|&i| is_trainable(&model.weights().entries()[i].0))
        .collect();
    let mut params: Vec<Tensor<f32>> = trainable.iter().map(|&i| model.weights().tensor(i).clone()).collect();
    let g: Vec<&Tensor<f32>> = trainable
        .iter()
        .map(|&i| grads.get(vars[i]).expect("trainable leaf"))
        .collect();
    state.step(&mut params, &g, cfg.learning_rate);
    if let Some(&i) = trainable
        .iter()
        .zip(&params)
        .find(|(_, p)| !p.all_finite())
        .map(|(i, _)| i)
    {
        return Ok(Some(format!("{} became non-finite", model.weights().entries()[i].0)));
    }
    for (&i, p) in trainable.iter().zip(params) {
        model.weights_mut().set(i, p)?;
    }
    model.apply_batch_stats(&pass.batch_stats, DEFAULT_MOMENTUM)?;
    Ok(None)
}

/// Trains one model, or two ensemble members side by side.
///
/// Each member gets its own optimizer and loss; they see the same
/// minibatches. Every epoch ends with a full scoring pass over both splits
/// (the ensemble's fused probabilities when there are two members). All
/// epochs always run; the returned weights are those of the epoch with the
/// lowest validation log loss, while `models` are left at the final epoch.
pub fn train(
    models: &mut [Network<f32>],
    ensemble: &EnsembleConfig,
    train_set: &dyn ClipSource,
    val_set: &dyn ClipSource,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(models, ensemble, train_set, val_set, cfg, &mut |_, _| {})
}

/// [`train`], calling `on_epoch` with each epoch's train and validation
/// records as they are computed.
pub fn train_with_progress(
    models: &mut [Network<f32>],
    ensemble: &EnsembleConfig,
    train_set: &dyn ClipSource,
    val_set: &dyn ClipSource,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&MetricsRecord, &MetricsRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    if models.is_empty() || models.len() > 2 {
        return Err(TrainError::Config(format!(
            "expected one or two models, got {}",
            models.len()
        )));
    }
    if models.len() == 2 {
        ensemble.validate()?;
    }
    let mut states: Vec<OptimizerState<f32>> = models
        .iter()
        .map(|m| {
            let sizes: Vec<usize> = m
                .weights()
                .entries()
                .iter()
                .filter(|(p, _)| is_trainable(p))
                .map(|(_, t)| t.len())
                .collect();
            OptimizerState::new(cfg.optimizer, &sizes)
        })
        .collect();

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<ModelWeights<f32>>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        for (b, videos) in order.chunks(cfg.batch_size).enumerate() {
            let mut frames: Vec<&RgbImage> = Vec::new();
            let mut labels = Vec::new();
            for &v in videos {
                let clip = train_set.clip(v, Access::Gradient);
                frames.extend(clip.iter());
                labels.extend(std::iter::repeat_n(train_set.label(v) as f32, clip.len()));
            }
            let batch = frames_to_batch::<f32>(&frames)?;
            for (model, state) in models.iter_mut().zip(&mut states) {
                if let Some(detail) = train_step(model, state, &batch, &labels, cfg)? {
                    return Err(TrainError::Divergence {
                        epoch,
                        batch: b + 1,
                        detail,
                    });
                }
            }
        }
        let train_rec = evaluate(models, ensemble, train_set, cfg, epoch, Split::Train)?;
        let val_rec = evaluate(models, ensemble, val_set, cfg, epoch, Split::Validation)?;
        if best.as_ref().is_none_or(|(loss, _)| val_rec.log_loss < *loss) {
            best = Some((val_rec.log_loss, models.iter().map(|m| m.weights().clone()).collect()));
        }
        on_epoch(&train_rec, &val_rec);
        epochs.push((train_rec, val_rec));
    }
    let log = EpochLog::new(epochs);
    let (_, best_weights) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { best_weights, log })
}

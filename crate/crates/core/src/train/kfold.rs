use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::MetricsRecord;
use crate::model::{EnsembleConfig, Network};

use super::{train_with_progress, InMemoryClips, Result, TrainConfig, TrainError, TrainOutcome};

/// Fold index of every video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }
}

/// Stratified split: each class is shuffled with `seed` and dealt round-robin
/// over the folds, the deal continuing where the previous class stopped so
/// fold sizes differ by at most one.
pub fn kfold_split(labels: &[f64], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(TrainError::KFold(format!("k must be at least 2, got {k}")));
    }
    if k > labels.len() {
        return Err(TrainError::KFold(format!(
            "k = {k} exceeds the {} videos",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for class in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| (labels[i] >= 0.5) == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldAssignment { k, folds })
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub validation_ids: Vec<String>,
    pub outcome: TrainOutcome,
}

/// Mean and population standard deviation of best-epoch validation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KFoldSummary {
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

impl KFoldSummary {
    pub fn from_folds(results: &[FoldResult]) -> Self {
        let stats = |f: &dyn Fn(&FoldResult) -> f64| {
            let n = results.len() as f64;
            let mean = results.iter().map(f).sum::<f64>() / n;
            let var = results.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let (accuracy_mean, accuracy_std) = stats(&|r| r.outcome.log.best().1.accuracy);
        let (f1_mean, f1_std) = stats(&|r| r.outcome.log.best().1.f1);
        Self {
            accuracy_mean,
            accuracy_std,
            f1_mean,
            f1_std,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KFoldReport {
    pub assignment: FoldAssignment,
    pub folds: Vec<FoldResult>,
    pub summary: KFoldSummary,
}

/// Trains fresh models on each requested fold (all folds when `only` is
/// `None`). Fold `f` trains with seed `cfg.seed ^ f`; `build` receives the
/// fold index and returns the untrained members, and `on_epoch` sees every
/// epoch's records tagged with the fold.
pub fn run_kfold(
    clips: &InMemoryClips,
    ensemble: &EnsembleConfig,
    cfg: &TrainConfig,
    only: Option<&[usize]>,
    mut build: impl FnMut(usize) -> Result<Vec<Network<f32>>>,
    mut on_epoch: impl FnMut(usize, &MetricsRecord, &MetricsRecord),
) -> Result<KFoldReport> {
    cfg.validate()?;
    let labels: Vec<f64> = clips.labels().into_iter().map(|(_, y)| y).collect();
    let assignment = kfold_split(&labels, cfg.k_folds, cfg.seed)?;
    let requested: Vec<usize> = match only {
        Some(folds) => {
            if let Some(&bad) = folds.iter().find(|&&f| f >= cfg.k_folds) {
                return Err(TrainError::KFold(format!(
                    "fold {bad} is out of range; valid range 0..{}",
                    cfg.k_folds
                )));
            }
            folds.to_vec()
        }
        None => (0..cfg.k_folds).collect(),
    };
    let mut folds = Vec::with_capacity(requested.len());
    for fold in requested {
        let val_idx = assignment.validation(fold);
        let train_set = clips.subset(&assignment.training(fold));
        let val_set = clips.subset(&val_idx);
        let fold_cfg = TrainConfig {
            seed: cfg.seed ^ fold as u64,
            ..cfg.clone()
        };
        let mut models = build(fold)?;
        let outcome = train_with_progress(&mut models, ensemble, &train_set, &val_set, &fold_cfg, &mut |t, v| {
            on_epoch(fold, t, v)
        })?;
        folds.push(FoldResult {
            fold,
            validation_ids: val_set.labels().into_iter().map(|(id, _)| id).collect(),
            outcome,
        });
    }
    let summary = KFoldSummary::from_folds(&folds);
    Ok(KFoldReport {
        assignment,
        folds,
        summary,
    })
}

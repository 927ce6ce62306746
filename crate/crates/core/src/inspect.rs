//! Training-curve export, overfitting diagnostics, and feature-map grids.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{encode_ppm, RgbImage};
use crate::model::{frames_to_batch, ModelError, Network};
use crate::tensor::Scalar;
use crate::train::EpochLog;

#[derive(Debug, thiserror::Error)]
pub enum InspectError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("epoch log is empty")]
    EmptyLog,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, InspectError>;

/// Gray level given to cells of constant maps and to empty grid cells.
pub const MID_GRAY: u8 = 128;

/// `(columns, rows)` of a grid holding `count` maps.
pub fn grid_shape(count: usize) -> (usize, usize) {
    if count == 0 {
        return (0, 0);
    }
    let mut cols = (count as f64).sqrt() as usize;
    while cols * cols < count {
        cols += 1;
    }
    (cols, count.div_ceil(cols))
}

/// Min-max scales one map to 0..=255; a constant map becomes mid-gray.
pub fn normalize_map(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![MID_GRAY; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapGrid {
    /// 1-based conv ordinal.
    pub layer_index: usize,
    /// One gray image per output channel.
    pub maps: Vec<RgbImage>,
    pub grid: RgbImage,
}

impl FeatureMapGrid {
    pub fn columns(&self) -> usize {
        grid_shape(self.maps.len()).0
    }

    pub fn rows(&self) -> usize {
        grid_shape(self.maps.len()).1
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, encode_ppm(&self.grid)).map_err(|source| InspectError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Post-activation output of conv layer `layer_index` for one frame, one
/// normalized map per channel, tiled row-major without gaps.
pub fn dump_feature_maps<T: Scalar>(
    model: &Network<T>,
    frame: &RgbImage,
    layer_index: usize,
) -> Result<FeatureMapGrid> {
    let out = model.feature_maps(&frames_to_batch::<T>(&[frame])?, layer_index)?;
    let (channels, h, w) = (out.shape()[1], out.shape()[2], out.shape()[3]);
    let plane = h * w;
    let maps: Vec<RgbImage> = out
        .data()
        .chunks_exact(plane)
        .map(|m| {
            let gray = normalize_map(&m.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
            RgbImage::from_gray(w, h, &gray).expect("plane matches map size")
        })
        .collect();
    debug_assert_eq!(maps.len(), channels);
    let (cols, rows) = grid_shape(channels);
    let mut grid = RgbImage::filled(cols * w, rows * h, [MID_GRAY; 3]);
    for (i, map) in maps.iter().enumerate() {
        let (gx, gy) = ((i % cols) * w, (i / cols) * h);
        for y in 0..h {
            for x in 0..w {
                grid.set_pixel(gx + x, gy + y, map.pixel(x, y));
            }
        }
    }
    Ok(FeatureMapGrid {
        layer_index,
        maps,
        grid,
    })
}

pub const CURVE_HEADER: [&str; 9] = [
    "epoch",
    "train_loss",
    "val_loss",
    "train_log_loss",
    "val_log_loss",
    "train_f1",
    "val_f1",
    "train_acc",
    "val_acc",
];

/// The curve table as CSV text, values at six decimals.
pub fn curves_csv(log: &EpochLog) -> Result<String> {
    if log.is_empty() {
        return Err(InspectError::EmptyLog);
    }
    let mut out = CURVE_HEADER.join(",");
    out.push('\n');
    for (i, (tr, va)) in log.epochs.iter().enumerate() {
        let values = [
            tr.loss,
            va.loss,
            tr.log_loss,
            va.log_loss,
            tr.f1,
            va.f1,
            tr.accuracy,
            va.accuracy,
        ];
        out.push_str(&(i + 1).to_string());
        for v in values {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn export_curves(log: &EpochLog, path: &Path) -> Result<()> {
    std::fs::write(path, curves_csv(log)?).map_err(|source| InspectError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Relative rise of the final validation log loss over the best one that
/// counts as overfitting.
pub const DEFAULT_OVERFIT_MARGIN: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    pub best_epoch: usize,
    pub epochs: usize,
    pub epochs_past_best: usize,
    pub best_val_log_loss: f64,
    pub final_val_log_loss: f64,
    pub final_train_log_loss: f64,
    /// Validation minus train log loss at the final epoch.
    pub val_minus_train_log_loss: f64,
    pub margin: f64,
    pub overfitting: bool,
}

pub fn overfit_report(log: &EpochLog, margin: f64) -> Result<OverfitReport> {
    if log.is_empty() {
        return Err(InspectError::EmptyLog);
    }
    let best = log.best().1.log_loss;
    let (last_train, last_val) = log.last();
    Ok(OverfitReport {
        best_epoch: log.best_epoch,
        epochs: log.len(),
        epochs_past_best: log.len() - log.best_epoch,
        best_val_log_loss: best,
        final_val_log_loss: last_val.log_loss,
        final_train_log_loss: last_train.log_loss,
        val_minus_train_log_loss: last_val.log_loss - last_train.log_loss,
        margin,
        overfitting: last_val.log_loss > best * (1.0 + margin),
    })
}

impl fmt::Display for OverfitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "best_epoch: {} of {}", self.best_epoch, self.epochs)?;
        writeln!(f, "epochs_past_best: {}", self.epochs_past_best)?;
        writeln!(f, "best_val_log_loss: {:.6}", self.best_val_log_loss)?;
        writeln!(f, "final_val_log_loss: {:.6}", self.final_val_log_loss)?;
        writeln!(f, "final_train_log_loss: {:.6}", self.final_train_log_loss)?;
        writeln!(f, "val_minus_train_log_loss: {:.6}", self.val_minus_train_log_loss)?;
        write!(
            f,
            "overfitting: {} (final validation log loss {} best by more than {:.0}%)",
            if self.overfitting { "yes" } else { "no" },
            if self.overfitting { "exceeds" } else { "does not exceed" },
            self.margin * 100.0
        )
    }
}

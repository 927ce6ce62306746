use serde::{Deserialize, Serialize};

use super::{ModelError, Network, Result};
use crate::dataset::{sample_frames, RgbImage};
use crate::nn::sigmoid_scalar;
use crate::tensor::{Scalar, Tensor};

/// Stacks frames into a `[N×3×H×W]` batch with pixels mapped to [-1, 1].
pub fn frames_to_batch<T: Scalar>(frames: &[&RgbImage]) -> Result<Tensor<T>> {
    let first = frames.first().ok_or(ModelError::EmptyFrames)?;
    let (h, w) = (first.height(), first.width());
    if frames.iter().any(|f| (f.height(), f.width()) != (h, w)) {
        return Err(ModelError::Input("frames in one batch must share a size".into()));
    }
    let plane = h * w;
    let mut data = vec![T::zero(); frames.len() * 3 * plane];
    for (n, frame) in frames.iter().enumerate() {
        for (p, rgb) in frame.data().chunks_exact(3).enumerate() {
            for (c, &v) in rgb.iter().enumerate() {
                data[(n * 3 + c) * plane + p] = T::lit(v as f64 / 127.5 - 1.0);
            }
        }
    }
    Ok(Tensor::new(&[frames.len(), 3, h, w], data)?)
}

/// Mean of per-frame logits, then sigmoid.
pub fn fuse_logits(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(ModelError::EmptyFrames);
    }
    Ok(sigmoid_scalar(logits.iter().sum::<f64>() / logits.len() as f64))
}

/// Video-level fake probability from `n_frames` sampled frames.
pub fn predict_video<T: Scalar>(model: &Network<T>, frames: &[RgbImage], n_frames: usize) -> Result<f64> {
    if frames.is_empty() {
        return Err(ModelError::EmptyFrames);
    }
    let picked: Vec<&RgbImage> = sample_frames(frames.len(), n_frames)
        .map_err(|e| ModelError::Input(e.to_string()))?
        .into_iter()
        .map(|i| &frames[i])
        .collect();
    let logits = model.logits(&frames_to_batch(&picked)?)?;
    fuse_logits(&logits.iter().map(|l| l.as_f64()).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub resnet_weight: f64,
    pub xception_weight: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            resnet_weight: 1.0,
            xception_weight: 1.0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.resnet_weight, self.xception_weight);
        if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
            return Err(ModelError::Ensemble(format!(
                "weights must be finite and non-negative, got ({a}, {b})"
            )));
        }
        if a + b == 0.0 {
            return Err(ModelError::Ensemble("ensemble weights are both zero".into()));
        }
        Ok(())
    }
}

/// Soft vote: weights normalized to sum to 1.
pub fn ensemble_predict(p_resnet: f64, p_xception: f64, cfg: &EnsembleConfig) -> Result<f64> {
    cfg.validate()?;
    for p in [p_resnet, p_xception] {
        if !(0.0..=1.0).contains(&p) {
            return Err(ModelError::Ensemble(format!("probability {p} is outside [0, 1]")));
        }
    }
    let total = cfg.resnet_weight + cfg.xception_weight;
    let p = (cfg.resnet_weight / total) * p_resnet + (cfg.xception_weight / total) * p_xception;
    // rounding can leave the combination an ulp outside its inputs
    Ok(p.clamp(p_resnet.min(p_xception), p_resnet.max(p_xception)))
}

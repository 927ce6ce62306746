//! Log loss, focal loss, confusion counts, F1 and accuracy.
//!
//! Probabilities are clamped to `[ε, 1−ε]` before any logarithm; the clamp has
//! zero gradient outside that interval. Threshold ties count as positive.

use serde::{Deserialize, Serialize};

use crate::tensor::{Backward, Scalar, Tape, Tensor, TensorError, Var};

pub const DEFAULT_CLAMP_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("{probs} probabilities but {labels} labels")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("metrics need at least one sample")]
    Empty,
    #[error("probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("label {0} is not 0 or 1")]
    Label(f64),
    #[error("invalid focal parameters: {0}")]
    Params(String),
    #[error("threshold {0} must lie strictly between 0 and 1")]
    Threshold(f64),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalParams {
    pub gamma: f64,
    /// Weight on the positive class; negatives get `1 − alpha`. `1.0`
    /// disables class weighting (both classes weigh 1).
    pub alpha: f64,
    pub clamp_epsilon: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 1.0,
            clamp_epsilon: DEFAULT_CLAMP_EPSILON,
        }
    }
}

impl FocalParams {
    pub fn with_gamma(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::default()
        }
    }

    /// `(positive, negative)` class weights.
    pub fn class_weights(&self) -> (f64, f64) {
        if self.alpha == 1.0 {
            (1.0, 1.0)
        } else {
            (self.alpha, 1.0 - self.alpha)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(MetricsError::Params(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(MetricsError::Params(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.clamp_epsilon > 0.0 && self.clamp_epsilon < 0.1) {
            return Err(MetricsError::Params(format!(
                "clamp epsilon must be in (0, 0.1), got {}",
                self.clamp_epsilon
            )));
        }
        Ok(())
    }
}

fn check_inputs(probs: &[f64], labels: &[f64]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            probs: probs.len(),
            labels: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(MetricsError::Probability(p));
    }
    if let Some(&y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(MetricsError::Label(y));
    }
    Ok(())
}

/// Mean binary cross-entropy.
pub fn log_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_inputs(probs, labels)?;
    let eps = DEFAULT_CLAMP_EPSILON;
    let total = probs.iter().zip(labels).fold(0.0, |acc, (&p, &y)| {
        let p = p.clamp(eps, 1.0 - eps);
        acc - (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    });
    Ok(total / probs.len() as f64)
}

/// `−w·(1−p_t)^γ·ln(p_t)` for one sample.
pub fn focal_term(p: f64, y: f64, params: &FocalParams) -> f64 {
    let p = p.clamp(params.clamp_epsilon, 1.0 - params.clamp_epsilon);
    let (w_pos, w_neg) = params.class_weights();
    let (pt, w) = if y == 1.0 { (p, w_pos) } else { (1.0 - p, w_neg) };
    -w * (1.0 - pt).powf(params.gamma) * pt.ln()
}

/// Mean focal loss; reduces to [`log_loss`] at `γ = 0, α = 1`.
pub fn focal_loss(probs: &[f64], labels: &[f64], params: &FocalParams) -> Result<f64> {
    check_inputs(probs, labels)?;
    params.validate()?;
    let total = probs
        .iter()
        .zip(labels)
        .fold(0.0, |acc, (&p, &y)| acc + focal_term(p, y, params));
    Ok(total / probs.len() as f64)
}

struct FocalRule<T> {
    labels: Vec<T>,
    params: FocalParams,
}

impl<T: Scalar> Backward<T> for FocalRule<T> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> crate::tensor::Result<Vec<Option<Tensor<T>>>> {
        let probs = inputs[0];
        let eps = T::lit(self.params.clamp_epsilon);
        let gamma = T::lit(self.params.gamma);
        let (w_pos, w_neg) = self.params.class_weights();
        let (w_pos, w_neg) = (T::lit(w_pos), T::lit(w_neg));
        let upstream = grad.data()[0] / T::lit(probs.len() as f64);
        let data = probs
            .data()
            .iter()
            .zip(&self.labels)
            .map(|(&p, &y)| {
                if p < eps || p > T::one() - eps {
                    return T::zero();
                }
                let positive = y == T::one();
                let (pt, w, sign) = if positive {
                    (p, w_pos, T::one())
                } else {
                    (T::one() - p, w_neg, -T::one())
                };
                let q = T::one() - pt;
                // d/dpt [−(1−pt)^γ ln pt] = γ(1−pt)^(γ−1) ln pt − (1−pt)^γ / pt
                let focus = if gamma == T::zero() {
                    T::zero()
                } else {
                    gamma * q.powf(gamma - T::one()) * pt.ln()
                };
                let d_pt = focus - q.powf(gamma) / pt;
                upstream * w * d_pt * sign
            })
            .collect();
        Ok(vec![Some(Tensor::new(probs.shape(), data)?)])
    }
}

/// Mean focal loss recorded on the tape, differentiable w.r.t. `probs`.
pub fn focal_loss_op<T: Scalar>(
    tape: &mut Tape<T>,
    probs: Var,
    labels: &[T],
    params: &FocalParams,
) -> crate::tensor::Result<Var> {
    let pv = tape.value(probs);
    if pv.len() != labels.len() {
        return Err(TensorError::Shape {
            op: "focal_loss",
            lhs: pv.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    params.validate().map_err(|e| TensorError::Contract(e.to_string()))?;
    let eps = T::lit(params.clamp_epsilon);
    let gamma = T::lit(params.gamma);
    let (w_pos, w_neg) = params.class_weights();
    let (w_pos, w_neg) = (T::lit(w_pos), T::lit(w_neg));
    let total = pv.data().iter().zip(labels).fold(T::zero(), |acc, (&p, &y)| {
        let p = p.max(eps).min(T::one() - eps);
        let (pt, w) = if y == T::one() {
            (p, w_pos)
        } else {
            (T::one() - p, w_neg)
        };
        acc - w * (T::one() - pt).powf(gamma) * pt.ln()
    });
    let value = Tensor::scalar(total / T::lit(pv.len() as f64));
    Ok(tape.record(
        value,
        &[probs],
        FocalRule {
            labels: labels.to_vec(),
            params: *params,
        },
    ))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Tallies predictions `p ≥ threshold` against binary labels.
pub fn confusion(probs: &[f64], labels: &[f64], threshold: f64) -> Result<ConfusionCounts> {
    if probs.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            probs: probs.len(),
            labels: labels.len(),
        });
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricsError::Threshold(threshold));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `2tp / (2tp + fp + fn)`, or 1.0 when there are no positives and none
/// were predicted.
pub fn f1_score(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(MetricsError::Empty),
        total => Ok((c.tp + c.tn) as f64 / total as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// Per-epoch metrics for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub log_loss: f64,
    pub f1: f64,
    pub accuracy: f64,
}

impl MetricsRecord {
    /// All metrics for one split at the 0.5 decision threshold.
    pub fn compute(epoch: usize, split: Split, probs: &[f64], labels: &[f64], focal: &FocalParams) -> Result<Self> {
        let counts = confusion(probs, labels, 0.5)?;
        Ok(Self {
            epoch,
            split,
            loss: focal_loss(probs, labels, focal)?,
            log_loss: log_loss(probs, labels)?,
            f1: f1_score(&counts),
            accuracy: accuracy(&counts)?,
        })
    }
}

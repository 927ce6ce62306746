use crate::tensor::{Backward, Result, Scalar, Tape, Tensor, TensorError, Var};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Training,
    Inference,
}

/// Per-channel statistics of one training-mode batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T: Scalar> {
    pub mean: Vec<T>,
    /// Biased variance, the one used for normalization.
    pub variance: Vec<T>,
    /// Number of values per channel (N·H·W).
    pub count: usize,
}

impl<T: Scalar> BatchStats<T> {
    /// Blends these statistics into running estimates; the running variance
    /// uses the unbiased batch variance.
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T], momentum: T) {
        let correction = T::lit(self.count as f64 / (self.count as f64 - 1.0));
        let keep = T::one() - momentum;
        for c in 0..self.mean.len() {
            running_mean[c] = keep * running_mean[c] + momentum * self.mean[c];
            running_var[c] = keep * running_var[c] + momentum * self.variance[c] * correction;
        }
    }
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(TensorError::Contract(format!(
            "batch_norm expects N×C×H×W, got {shape:?}"
        ))),
    }
}

fn check_channel_param<T: Scalar>(name: &str, t: &Tensor<T>, channels: usize) -> Result<()> {
    if t.shape() != [channels] {
        return Err(TensorError::Contract(format!(
            "batch_norm {name} must have shape [{channels}], got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Normalizes `x` with per-channel `mean` and `inv_std`, then applies the
/// affine transform. Returns `(y, x_hat)`.
fn normalize<T: Scalar>(x: &Tensor<T>, mean: &[T], inv_std: &[T], scale: &[T], shift: &[T]) -> (Vec<T>, Vec<T>) {
    let (_, c, hw) = layout(x.shape()).expect("validated");
    let mut y = Vec::with_capacity(x.len());
    let mut x_hat = Vec::with_capacity(x.len());
    for (i, plane) in x.data().chunks(hw).enumerate() {
        let ch = i % c;
        for &v in plane {
            let h = (v - mean[ch]) * inv_std[ch];
            x_hat.push(h);
            y.push(scale[ch] * h + shift[ch]);
        }
    }
    (y, x_hat)
}

struct NormRule<T> {
    inv_std: Vec<T>,
    x_hat: Vec<T>,
    batch_statistics: bool,
}

impl<T: Scalar> Backward<T> for NormRule<T> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, scale) = (inputs[0], inputs[1]);
        let (n, c, hw) = layout(x.shape())?;
        let count = T::lit((n * hw) as f64);
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (i, (g, h)) in grad.data().chunks(hw).zip(self.x_hat.chunks(hw)).enumerate() {
            let ch = i % c;
            for (&g, &h) in g.iter().zip(h) {
                sum_dy[ch] = sum_dy[ch] + g;
                sum_dy_xhat[ch] = sum_dy_xhat[ch] + g * h;
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = Vec::with_capacity(x.len());
            for (i, (g, h)) in grad.data().chunks(hw).zip(self.x_hat.chunks(hw)).enumerate() {
                let ch = i % c;
                let k = scale.data()[ch] * self.inv_std[ch];
                for (&g, &h) in g.iter().zip(h) {
                    dx.push(if self.batch_statistics {
                        k * (g - (sum_dy[ch] + h * sum_dy_xhat[ch]) / count)
                    } else {
                        k * g
                    });
                }
            }
            dx
        });
        Ok(vec![
            dx.map(|v| Tensor::new(x.shape(), v)).transpose()?,
            needs[1].then(|| Tensor::new(&[c], sum_dy_xhat)).transpose()?,
            needs[2].then(|| Tensor::new(&[c], sum_dy)).transpose()?,
        ])
    }
}

/// Training-mode batch normalization over N, H, W with batch statistics.
///
/// Running statistics are not touched; the caller folds the returned
/// [`BatchStats`] into them.
pub fn batch_norm_train<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    scale: Var,
    shift: Var,
    epsilon: T,
) -> Result<(Var, BatchStats<T>)> {
    let xv = tape.value(x);
    let (n, c, hw) = layout(xv.shape())?;
    check_channel_param("scale", tape.value(scale), c)?;
    check_channel_param("shift", tape.value(shift), c)?;
    let count = n * hw;
    if count < 2 {
        return Err(TensorError::Contract(format!(
            "training-mode batch_norm needs at least 2 values per channel, got {count}"
        )));
    }
    let mut mean = vec![T::zero(); c];
    for (i, plane) in xv.data().chunks(hw).enumerate() {
        mean[i % c] = plane.iter().fold(mean[i % c], |acc, &v| acc + v);
    }
    let m = T::lit(count as f64);
    mean.iter_mut().for_each(|v| *v = *v / m);
    let mut variance = vec![T::zero(); c];
    for (i, plane) in xv.data().chunks(hw).enumerate() {
        let mu = mean[i % c];
        variance[i % c] = plane.iter().fold(variance[i % c], |acc, &v| acc + (v - mu) * (v - mu));
    }
    variance.iter_mut().for_each(|v| *v = *v / m);
    let inv_std: Vec<T> = variance.iter().map(|&v| T::one() / (v + epsilon).sqrt()).collect();
    let (y, x_hat) = normalize(xv, &mean, &inv_std, tape.value(scale).data(), tape.value(shift).data());
    let value = Tensor::new(xv.shape(), y)?;
    let out = tape.record(
        value,
        &[x, scale, shift],
        NormRule {
            inv_std,
            x_hat,
            batch_statistics: true,
        },
    );
    Ok((out, BatchStats { mean, variance, count }))
}

/// Inference-mode batch normalization using running statistics.
pub fn batch_norm_infer<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    scale: Var,
    shift: Var,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    epsilon: T,
) -> Result<Var> {
    let xv = tape.value(x);
    let (_, c, _) = layout(xv.shape())?;
    check_channel_param("scale", tape.value(scale), c)?;
    check_channel_param("shift", tape.value(shift), c)?;
    check_channel_param("running_mean", running_mean, c)?;
    check_channel_param("running_var", running_var, c)?;
    let inv_std: Vec<T> = running_var
        .data()
        .iter()
        .map(|&v| T::one() / (v + epsilon).sqrt())
        .collect();
    let (y, x_hat) = normalize(
        xv,
        running_mean.data(),
        &inv_std,
        tape.value(scale).data(),
        tape.value(shift).data(),
    );
    let value = Tensor::new(xv.shape(), y)?;
    Ok(tape.record(
        value,
        &[x, scale, shift],
        NormRule {
            inv_std,
            x_hat,
            batch_statistics: false,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T: Scalar> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: T,
    pub momentum: T,
    pub mode: NormMode,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Tensor::full(&[channels], T::one()),
            shift: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            epsilon: T::lit(DEFAULT_EPSILON),
            momentum: T::lit(DEFAULT_MOMENTUM),
            mode: NormMode::Training,
        }
    }

    /// Normalizes `x`; in training mode the running statistics are updated.
    pub fn apply(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let scale = tape.constant(self.scale.clone());
        let shift = tape.constant(self.shift.clone());
        match self.mode {
            NormMode::Training => {
                let (out, stats) = batch_norm_train(&mut tape, xv, scale, shift, self.epsilon)?;
                let mut rm = self.running_mean.to_vec();
                let mut rv = self.running_var.to_vec();
                stats.update_running(&mut rm, &mut rv, self.momentum);
                self.running_mean = Tensor::new(self.running_mean.shape(), rm)?;
                self.running_var = Tensor::new(self.running_var.shape(), rv)?;
                Ok(tape.value(out).clone())
            }
            NormMode::Inference => {
                let out = batch_norm_infer(
                    &mut tape,
                    xv,
                    scale,
                    shift,
                    &self.running_mean,
                    &self.running_var,
                    self.epsilon,
                )?;
                Ok(tape.value(out).clone())
            }
        }
    }
}

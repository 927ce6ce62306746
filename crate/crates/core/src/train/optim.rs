use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn sgd() -> Self {
        Optimizer::SgdMomentum { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must lie in [0, 1), got {v}"))
            }
        };
        match *self {
            Optimizer::SgdMomentum { momentum } => unit("momentum", momentum),
            Optimizer::Adam { beta1, beta2, epsilon } => {
                unit("beta1", beta1)?;
                unit("beta2", beta2)?;
                if epsilon > 0.0 {
                    Ok(())
                } else {
                    Err(format!("adam epsilon must be positive, got {epsilon}"))
                }
            }
        }
    }
}

/// Per-parameter optimizer state for one model.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Scalar> {
    kind: Optimizer,
    step: i32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: Optimizer, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![T::zero(); n]).collect::<Vec<_>>();
        let second = match kind {
            Optimizer::Adam { .. } => zeros(),
            Optimizer::SgdMomentum { .. } => Vec::new(),
        };
        Self {
            kind,
            step: 0,
            first: zeros(),
            second,
        }
    }

    /// Applies one update to `params` in place; `grads[i]` matches
    /// `params[i]`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[&Tensor<T>], learning_rate: f64) {
        self.step += 1;
        let lr = T::lit(learning_rate);
        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let mut w = param.to_vec();
            match self.kind {
                Optimizer::SgdMomentum { momentum } => {
                    let mu = T::lit(momentum);
                    for ((w, v), &g) in w.iter_mut().zip(&mut self.first[i]).zip(grad.data()) {
                        *v = mu * *v + g;
                        *w = *w - lr * *v;
                    }
                }
                Optimizer::Adam { beta1, beta2, epsilon } => {
                    let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(epsilon));
                    let c1 = T::one() - b1.powi(self.step);
                    let c2 = T::one() - b2.powi(self.step);
                    let moments = self.first[i].iter_mut().zip(&mut self.second[i]);
                    for ((w, (m, v)), &g) in w.iter_mut().zip(moments).zip(grad.data()) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        *w = *w - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
            *param = Tensor::new(param.shape(), w).expect("update keeps the shape");
        }
    }
}

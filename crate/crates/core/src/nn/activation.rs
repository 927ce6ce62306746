use crate::tensor::{Backward, Result, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Logistic function evaluated without overflow for large |x|.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

struct Rule(Activation);

impl<T: Scalar> Backward<T> for Rule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let data: Vec<T> = match self.0 {
            Activation::Relu => inputs[0]
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                .collect(),
            Activation::Sigmoid => output
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&s, &g)| g * s * (T::one() - s))
                .collect(),
        };
        Ok(vec![Some(Tensor::new(grad.shape(), data)?)])
    }
}

pub fn activate<T: Scalar>(tape: &mut Tape<T>, x: Var, kind: Activation) -> Var {
    let value = match kind {
        Activation::Relu => {
            tape.mark_kink(x);
            tape.value(x).map(|v| if v > T::zero() { v } else { T::zero() })
        }
        Activation::Sigmoid => tape.value(x).map(sigmoid_scalar),
    };
    tape.record(value, &[x], Rule(kind))
}

pub fn relu<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    activate(tape, x, Activation::Relu)
}

pub fn sigmoid<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    activate(tape, x, Activation::Sigmoid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, ops};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn apply(kind: Activation, x: f32) -> f32 {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::scalar(x));
        let y = activate(&mut tape, v, kind);
        tape.value(y).data()[0]
    }

    #[test]
    fn reference_values() {
        assert_eq!(apply(Activation::Relu, -1.0), 0.0);
        assert_eq!(apply(Activation::Relu, 2.0), 2.0);
        assert_eq!(apply(Activation::Sigmoid, 0.0), 0.5);
        // 1 / (1 + e^-10) = 0.999954602131...
        assert!((apply(Activation::Sigmoid, 10.0) - 0.999_954_6).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_is_finite_at_extremes() {
        for x in [-80.0f32, -40.0, 40.0, 80.0] {
            let s = apply(Activation::Sigmoid, x);
            assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        }
    }

    proptest! {
        #[test]
        fn activations_are_monotone(a in -50.0f32..50.0, b in -50.0f32..50.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for kind in [Activation::Relu, Activation::Sigmoid] {
                prop_assert!(apply(kind, lo) <= apply(kind, hi));
            }
        }
    }

    #[test]
    fn sigmoid_of_matmul_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut small = |shape: &[usize]| Tensor::<f64>::from_fn(shape, |_| rng.random_range(-0.5..0.5));
            let params = vec![("w".to_string(), small(&[2, 3])), ("x".to_string(), small(&[3, 2]))];
            let report = grad_check(
                |tape, p| {
                    let z = ops::matmul(tape, p[0], p[1])?;
                    let s = sigmoid(tape, z);
                    Ok(ops::sum(tape, s))
                },
                &params,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn relu_matches_finite_differences_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::from_fn(&[12], |_| {
            let v: f64 = rng.random_range(0.01..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let report = grad_check(
            |tape, p| {
                let r = relu(tape, p[0]);
                let r2 = ops::mul(tape, r, r)?;
                Ok(ops::sum(tape, r2))
            },
            &[("x".into(), x)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}

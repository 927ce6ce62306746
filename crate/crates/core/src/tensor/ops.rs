//! Elementary differentiable operations.

use super::{Backward, Result, Scalar, Tape, Tensor, TensorError, Var};

fn same_shape<T: Scalar>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(TensorError::Shape {
            op,
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        });
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("operands share a shape")
}

/// Row-major `[m×k]·[k×n]` product without recording anything.
pub fn matmul_values<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(TensorError::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    };
    if k != k2 {
        return Err(TensorError::Shape {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        (a.data(), k as isize, 1),
        (b.data(), n as isize, 1),
        T::zero(),
        (&mut out, n as isize, 1),
    );
    Tensor::new(&[m, n], out)
}

struct MatMul;

impl<T: Scalar> Backward<T> for MatMul {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![None, None];
        if needs[0] {
            // dA = dC · Bᵀ
            let mut da = vec![T::zero(); m * k];
            T::gemm(
                m,
                n,
                k,
                T::one(),
                (grad.data(), n as isize, 1),
                (b.data(), 1, n as isize),
                T::zero(),
                (&mut da, k as isize, 1),
            );
            out[0] = Some(Tensor::new(&[m, k], da)?);
        }
        if needs[1] {
            // dB = Aᵀ · dC
            let mut db = vec![T::zero(); k * n];
            T::gemm(
                k,
                m,
                n,
                T::one(),
                (a.data(), 1, k as isize),
                (grad.data(), n as isize, 1),
                T::zero(),
                (&mut db, n as isize, 1),
            );
            out[1] = Some(Tensor::new(&[k, n], db)?);
        }
        Ok(out)
    }
}

pub fn matmul<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let value = matmul_values(tape.value(a), tape.value(b))?;
    Ok(tape.record(value, &[a, b], MatMul))
}

struct Add;

impl<T: Scalar> Backward<T> for Add {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(grad.clone()), Some(grad.clone())])
    }
}

pub fn add<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "add", a, b)?;
    let value = zip_map(tape.value(a), tape.value(b), |x, y| x + y);
    Ok(tape.record(value, &[a, b], Add))
}

struct Sub;

impl<T: Scalar> Backward<T> for Sub {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(grad.clone()), Some(grad.map(|g| -g))])
    }
}

pub fn sub<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "sub", a, b)?;
    let value = zip_map(tape.value(a), tape.value(b), |x, y| x - y);
    Ok(tape.record(value, &[a, b], Sub))
}

struct Mul;

impl<T: Scalar> Backward<T> for Mul {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![
            needs[0].then(|| zip_map(grad, inputs[1], |g, b| g * b)),
            needs[1].then(|| zip_map(grad, inputs[0], |g, a| g * a)),
        ])
    }
}

/// Elementwise product.
pub fn mul<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "mul", a, b)?;
    let value = zip_map(tape.value(a), tape.value(b), |x, y| x * y);
    Ok(tape.record(value, &[a, b], Mul))
}

struct Scale<T>(T);

impl<T: Scalar> Backward<T> for Scale<T> {
    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let s = self.0;
        Ok(vec![Some(grad.map(|g| g * s))])
    }
}

pub fn scale<T: Scalar>(tape: &mut Tape<T>, a: Var, factor: T) -> Var {
    let value = tape.value(a).map(|x| x * factor);
    tape.record(value, &[a], Scale(factor))
}

struct Sum;

impl<T: Scalar> Backward<T> for Sum {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(Tensor::full(inputs[0].shape(), grad.data()[0]))])
    }
}

/// Sum of all elements, accumulated in ascending index order.
pub fn sum<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Var {
    let total = tape.value(a).data().iter().fold(T::zero(), |acc, &v| acc + v);
    tape.record(Tensor::scalar(total), &[a], Sum)
}

pub fn mean<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Var {
    let n = T::lit(tape.value(a).len() as f64);
    let total = sum(tape, a);
    scale(tape, total, T::one() / n)
}

struct Reshape;

impl<T: Scalar> Backward<T> for Reshape {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(grad.reshape(inputs[0].shape())?)])
    }
}

pub fn reshape<T: Scalar>(tape: &mut Tape<T>, a: Var, shape: &[usize]) -> Result<Var> {
    let value = tape.value(a).reshape(shape)?;
    Ok(tape.record(value, &[a], Reshape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn loop_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let a = Tensor::<f32>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul_values(&Tensor::eye(2), &a).unwrap(), a);
        let x = Tensor::<f32>::new(&[1, 1], vec![2.0]).unwrap();
        let y = Tensor::<f32>::new(&[1, 1], vec![3.0]).unwrap();
        assert_eq!(matmul_values(&x, &y).unwrap().data(), &[6.0]);
    }

    #[test]
    fn matmul_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, &[4, 3]);
        let b = random(&mut rng, &[3, 5]);
        let c = matmul_values(&a, &b).unwrap();
        for (x, y) in c.data().iter().zip(loop_matmul(&a, &b)) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let err = matmul_values(&Tensor::<f32>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::Shape { .. }));
    }

    #[test]
    fn square_has_derivative_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::scalar(3.0), true);
        let y = mul(&mut tape, x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::scalar(3.0), true);
        let c = tape.constant(Tensor::scalar(5.0));
        let y = scale(&mut tape, c, 2.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let y = tape.leaf(Tensor::<f64>::scalar(0.7), true);
        let z = add(&mut tape, y, y).unwrap();
        let grads = tape.backward(z).unwrap();
        assert_eq!(grads.get(y).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_contract_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros(&[2]), true);
        let y = scale(&mut tape, x, 2.0);
        assert!(matches!(tape.backward(y), Err(TensorError::Contract(_))));

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::scalar(1.0), true);
        let y = mul(&mut tape, x, x).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(TensorError::Contract(_))));
    }

    #[test]
    fn elementwise_ops_pass_grad_check() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = vec![
                ("a".to_string(), random(&mut rng, &[3, 4])),
                ("b".to_string(), random(&mut rng, &[4, 2])),
                ("c".to_string(), random(&mut rng, &[3, 2])),
            ];
            let report = grad_check(
                |tape, p| {
                    let ab = matmul(tape, p[0], p[1])?;
                    let d = mul(tape, ab, p[2])?;
                    let e = sub(tape, d, p[2])?;
                    let f = add(tape, e, ab)?;
                    let g = reshape(tape, f, &[6])?;
                    let h = mul(tape, g, g)?;
                    Ok(mean(tape, h))
                },
                &params,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }
}

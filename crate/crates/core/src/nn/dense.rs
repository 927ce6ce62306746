use crate::tensor::{Backward, Result, Scalar, Tape, Tensor, TensorError, Var};

struct DenseRule;

impl<T: Scalar> Backward<T> for DenseRule {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (n, fan_in, fan_out) = (x.shape()[0], x.shape()[1], w.shape()[0]);
        let dx = needs[0].then(|| {
            // dX[n×in] = dY[n×out] · W[out×in]
            let mut dx = vec![T::zero(); n * fan_in];
            T::gemm(
                n,
                fan_out,
                fan_in,
                T::one(),
                (grad.data(), fan_out as isize, 1),
                (w.data(), fan_in as isize, 1),
                T::zero(),
                (&mut dx, fan_in as isize, 1),
            );
            dx
        });
        let dw = needs[1].then(|| {
            // dW[out×in] = dYᵀ · X
            let mut dw = vec![T::zero(); fan_out * fan_in];
            T::gemm(
                fan_out,
                n,
                fan_in,
                T::one(),
                (grad.data(), 1, fan_out as isize),
                (x.data(), fan_in as isize, 1),
                T::zero(),
                (&mut dw, fan_in as isize, 1),
            );
            dw
        });
        let db = needs[2].then(|| {
            let mut db = vec![T::zero(); fan_out];
            for row in grad.data().chunks(fan_out) {
                for (acc, &g) in db.iter_mut().zip(row) {
                    *acc = *acc + g;
                }
            }
            db
        });
        Ok(vec![
            dx.map(|v| Tensor::new(x.shape(), v)).transpose()?,
            dw.map(|v| Tensor::new(w.shape(), v)).transpose()?,
            db.map(|v| Tensor::new(&[fan_out], v)).transpose()?,
        ])
    }
}

fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[n, fan_in], &[fan_out, w_in]) = (x.shape(), w.shape()) else {
        return Err(TensorError::Shape {
            op: "dense",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    };
    if fan_in != w_in || b.shape() != [fan_out] {
        return Err(TensorError::Shape {
            op: "dense",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let mut out: Vec<T> = b.data().iter().copied().cycle().take(n * fan_out).collect();
    T::gemm(
        n,
        fan_in,
        fan_out,
        T::one(),
        (x.data(), fan_in as isize, 1),
        (w.data(), 1, fan_in as isize),
        T::one(),
        (&mut out, fan_out as isize, 1),
    );
    Tensor::new(&[n, fan_out], out)
}

/// Fully connected layer: `x [N×in] · Wᵀ + bias`, with `W [out×in]`.
pub fn dense<T: Scalar>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let value = dense_forward(tape.value(x), tape.value(weight), tape.value(bias))?;
    Ok(tape.record(value, &[x, weight, bias], DenseRule))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T: Scalar> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        dense_forward(x, &self.weights, &self.bias)
    }
}

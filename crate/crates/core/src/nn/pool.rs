use crate::tensor::{Backward, Result, Scalar, Tape, Tensor, TensorError, Var};

struct GlobalAvgPool;

impl<T: Scalar> Backward<T> for GlobalAvgPool {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let shape = inputs[0].shape();
        let hw = shape[2] * shape[3];
        let inv = T::one() / T::lit(hw as f64);
        let data = grad
            .data()
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, hw))
            .collect();
        Ok(vec![Some(Tensor::new(shape, data)?)])
    }
}

/// `[N×C×H×W] → [N×C]` spatial mean per channel.
pub fn global_avg_pool<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let &[n, c, h, w] = xv.shape() else {
        return Err(TensorError::Contract(format!(
            "global_avg_pool expects N×C×H×W, got {:?}",
            xv.shape()
        )));
    };
    let hw = T::lit((h * w) as f64);
    let data = xv
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().fold(T::zero(), |acc, &v| acc + v) / hw)
        .collect();
    let value = Tensor::new(&[n, c], data)?;
    Ok(tape.record(value, &[x], GlobalAvgPool))
}

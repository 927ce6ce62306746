use super::{Result, Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reverse rule of a recorded operation.
///
/// `needs[i]` tells whether input `i` wants a gradient; entries for inputs
/// that do not may be `None`.
pub trait Backward<T: Scalar> {
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
    leaf: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed as operations execute, so every node's inputs precede it.
/// A tape can be differentiated once; build a new tape for the next step.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    differentiated: bool,
    kinks: Vec<Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            differentiated: false,
            kinks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad,
            leaf: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn is_leaf(&self, var: Var) -> bool {
        self.nodes[var.0].leaf
    }

    /// Operands the value was computed from; empty for leaves.
    pub fn inputs(&self, var: Var) -> &[Var] {
        &self.nodes[var.0].inputs
    }

    /// Notes that an operation applied to `x` is non-differentiable where
    /// `x` crosses zero.
    pub fn mark_kink(&mut self, x: Var) {
        self.kinks.push(x);
    }

    /// Sign pattern (`> 0`) of every value marked with [`Tape::mark_kink`].
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> Vec<bool> {
        self.kinks
            .iter()
            .flat_map(|v| self.nodes[v.0].value.data().iter().map(|&x| x > T::zero()))
            .collect()
    }

    /// Records `value` as the result of an operation over `inputs`.
    ///
    /// The rule is dropped when no input requires a gradient.
    pub fn record(&mut self, value: Tensor<T>, inputs: &[Var], rule: impl Backward<T> + 'static) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            rule: requires_grad.then(|| Box::new(rule) as Box<dyn Backward<T>>),
            requires_grad,
            leaf: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every leaf that requires a gradient receives one of its own shape,
    /// zero when the loss does not depend on it.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.differentiated {
            return Err(TensorError::Contract(
                "backward already ran on this tape; record a fresh forward pass".into(),
            ));
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        self.differentiated = true;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.leaf && node.requires_grad {
                grads[i] = Some(vec![T::zero(); node.value.len()]);
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(self.collect(grads));
        }
        accumulate(&mut grads[loss.0], &[T::one()], 1);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(rule) = node.rule.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let grad = Tensor::new(node.value.shape(), g)?;
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input_grads = rule.backward(&inputs, &node.value, &grad, &needs)?;
            for ((input, needed), g_in) in node.inputs.iter().zip(&needs).zip(input_grads) {
                let (true, Some(g_in)) = (*needed, g_in) else {
                    continue;
                };
                let target = &self.nodes[input.0].value;
                if g_in.shape() != target.shape() {
                    return Err(TensorError::Shape {
                        op: "backward",
                        lhs: target.shape().to_vec(),
                        rhs: g_in.shape().to_vec(),
                    });
                }
                accumulate(&mut grads[input.0], g_in.data(), target.len());
            }
        }
        Ok(self.collect(grads))
    }

    fn collect(&self, grads: Vec<Option<Vec<T>>>) -> Gradients<T> {
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match g {
                Some(g) if node.leaf && node.requires_grad => {
                    Some(Tensor::new(node.value.shape(), g).expect("gradient matches leaf shape"))
                }
                _ => None,
            })
            .collect();
        Gradients { grads }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T], len: usize) {
    match slot {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        None => {
            debug_assert_eq!(g.len(), len);
            *slot = Some(g.to_vec());
        }
    }
}

/// Gradients of the leaves of a differentiated tape.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

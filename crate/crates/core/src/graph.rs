//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its value, the handles of its
//! operands and a closure computing the vector-Jacobian product. Nodes are
//! appended after their operands, so creation order is a topological order
//! and `backward` is a single reverse sweep.
//!
//! Kernels outside this module register their own differentiable operations
//! through [`DiffGraph::custom`].

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a node on a [`DiffGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Arguments handed to a backward closure.
pub struct BackwardArgs<'a> {
    /// Gradient of the final output with respect to this node's value.
    pub grad: &'a Tensor,
    /// Operand values, in the order the operands were registered.
    pub inputs: &'a [&'a Tensor],
    /// This node's forward value.
    pub output: &'a Tensor,
    /// Which operands need a gradient; the closure may return `None` for the rest.
    pub needs: &'a [bool],
}

pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    operands: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct DiffGraph {
    nodes: Vec<Node>,
}

impl DiffGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            operands: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Appends a node computed outside the tape. `backward` must return one
    /// entry per operand, each either `None` or a tensor shaped like that operand.
    pub fn custom(&mut self, value: Tensor, operands: &[Var], backward: BackwardFn) -> Var {
        debug_assert!(operands.iter().all(|o| o.0 < self.nodes.len()));
        let requires_grad = operands.iter().any(|o| self.nodes[o.0].requires_grad);
        self.nodes.push(Node {
            value,
            operands: operands.to_vec(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.custom(
            value,
            &[a, b],
            Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.custom(
            value,
            &[a, b],
            Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.scale(-1.0))]),
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.custom(
            value,
            &[a, b],
            Box::new(|args| {
                let [x, y] = args.inputs else { unreachable!() };
                vec![
                    args.needs[0].then(|| args.grad.mul(y).expect("shape")),
                    args.needs[1].then(|| args.grad.mul(x).expect("shape")),
                ]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        self.custom(value, &[a], Box::new(move |args| vec![Some(args.grad.scale(k))]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = ops::relu(self.value(a));
        self.custom(
            value,
            &[a],
            Box::new(|args| {
                let x = args.inputs[0];
                let g = Tensor::from_fn(x.shape(), |i| {
                    if x.data()[i] > 0.0 {
                        args.grad.data()[i]
                    } else {
                        0.0
                    }
                });
                vec![Some(g)]
            }),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.custom(
            value,
            &[a, b],
            Box::new(|args| {
                let [x, y] = args.inputs else { unreachable!() };
                let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                let g = args.grad.data();
                vec![
                    args.needs[0].then(|| {
                        Tensor::from_parts(vec![m, k], ops::matmul_a_bt(g, y.data(), m, n, k))
                    }),
                    args.needs[1].then(|| {
                        Tensor::from_parts(vec![k, n], ops::matmul_at_b(x.data(), g, m, k, n))
                    }),
                ]
            }),
        ))
    }

    /// Adds `bias[n]` along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = ops::add_bias(self.value(x), self.value(bias))?;
        Ok(self.custom(
            value,
            &[x, bias],
            Box::new(|args| {
                let n = args.inputs[1].numel();
                let gb = args.needs[1].then(|| {
                    let mut acc = vec![0.0; n];
                    for row in args.grad.data().chunks(n) {
                        for (a, g) in acc.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                    Tensor::from_parts(vec![n], acc)
                });
                vec![Some(args.grad.clone()), gb]
            }),
        ))
    }

    /// 1×1 convolution over the last axis: `x · weight + bias` at every location.
    pub fn channel_linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let cin = *shape.last().unwrap_or(&0);
        let w = self.value(weight);
        if w.rank() != 2 || w.shape()[0] != cin {
            return Err(Error::shape("channel_linear", &shape, w.shape()));
        }
        let cout = w.shape()[1];
        let rows = self.value(x).numel() / cin;
        let flat = self.reshape(x, &[rows, cin])?;
        let mixed = self.matmul(flat, weight)?;
        let biased = self.add_bias(mixed, bias)?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = cout;
        self.reshape(biased, &out_shape)
    }

    /// Elementwise `|x|`; the subgradient at zero is taken as zero.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.custom(
            value,
            &[a],
            Box::new(|args| {
                let x = args.inputs[0];
                let g = Tensor::from_fn(x.shape(), |i| {
                    let v = x.data()[i];
                    if v == 0.0 {
                        0.0
                    } else {
                        v.signum() * args.grad.data()[i]
                    }
                });
                vec![Some(g)]
            }),
        )
    }

    /// Rows `rows` of a matrix `x[N×C]`, as a `K×C` matrix. Rows may repeat.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || rows.is_empty() {
            return Err(Error::shape("gather_rows", xv.shape(), &[rows.len()]));
        }
        let (n, c) = (xv.shape()[0], xv.shape()[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::contract(format!("gather_rows: row {bad} out of range for {n} rows")));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(&xv.data()[r * c..(r + 1) * c]);
        }
        let rows = rows.to_vec();
        Ok(self.custom(
            Tensor::from_parts(vec![rows.len(), c], data),
            &[x],
            Box::new(move |args| {
                let mut g = vec![0.0; n * c];
                for (k, &r) in rows.iter().enumerate() {
                    for (a, b) in g[r * c..(r + 1) * c].iter_mut().zip(&args.grad.data()[k * c..(k + 1) * c]) {
                        *a += b;
                    }
                }
                vec![Some(Tensor::from_parts(vec![n, c], g))]
            }),
        ))
    }

    /// Softmax over all elements of `x`.
    pub fn softmax(&mut self, x: Var) -> Var {
        let value = ops::softmax(self.value(x));
        self.custom(
            value,
            &[x],
            Box::new(|args| {
                let g = ops::softmax_vjp(args.output.data(), args.grad.data());
                vec![Some(Tensor::from_parts(args.output.shape().to_vec(), g))]
            }),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.custom(
            value,
            &[x],
            Box::new(|args| {
                let g = args.grad.reshape(args.inputs[0].shape()).expect("reshape");
                vec![Some(g)]
            }),
        ))
    }

    /// Picks element `index` (flat) of `x` as a scalar.
    pub fn element(&mut self, x: Var, index: usize) -> Var {
        let value = Tensor::scalar(self.value(x).data()[index]);
        self.custom(
            value,
            &[x],
            Box::new(move |args| {
                let mut g = Tensor::zeros(args.inputs[0].shape());
                g.data_mut()[index] = args.grad.item();
                vec![Some(g)]
            }),
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.custom(
            value,
            &[x],
            Box::new(|args| vec![Some(Tensor::full(args.inputs[0].shape(), args.grad.item()))]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// `Σ x²`.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        self.custom(
            value,
            &[x],
            Box::new(|args| vec![Some(args.inputs[0].scale(2.0 * args.grad.item()))]),
        )
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if !out.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::ones(out.shape()));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.operands.iter().map(|o| &self.nodes[o.0].value).collect();
            let needs: Vec<bool> = node
                .operands
                .iter()
                .map(|o| self.nodes[o.0].requires_grad)
                .collect();
            let local = backward(&BackwardArgs {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            });
            debug_assert_eq!(local.len(), node.operands.len());
            for ((operand, g), need) in node.operands.iter().zip(local).zip(&needs) {
                let (Some(g), true) = (g, *need) else { continue };
                debug_assert_eq!(g.shape(), self.nodes[operand.0].value.shape());
                match &mut grads[operand.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            // Leaves keep their gradient; intermediates are released once propagated.
            grads[idx] = None;
        }
        let leaf_grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| if self.nodes[i].backward.is_none() { g } else { None })
            .collect();
        Ok(Gradients { grads: leaf_grads })
    }
}

/// Gradients of a scalar output with respect to every tracked leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like `like` when the output does not depend on it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut g = DiffGraph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_first_component_jacobian() {
        let mut g = DiffGraph::new();
        let x = g.param(Tensor::vector(&[0.0, 0.0]));
        let s = g.softmax(x);
        let y = g.element(s, 0);
        let grads = g.backward(y).unwrap();
        let gx = grads.get(x).unwrap().data();
        assert!((gx[0] - 0.25).abs() < 1e-15);
        assert!((gx[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut g = DiffGraph::new();
        let x = g.param(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_operand_gradients_accumulate() {
        // f = sum(x ⊙ x) + sum(x) → ∂f/∂x = 2x + 1
        let mut g = DiffGraph::new();
        let x = g.param(Tensor::vector(&[1.0, -2.0, 0.5]));
        let sq = g.mul(x, x).unwrap();
        let a = g.sum(sq);
        let b = g.sum(x);
        let f = g.add(a, b).unwrap();
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, -3.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = DiffGraph::new();
        let x = g.param(Tensor::vector(&[1.0, 2.0]));
        let c = g.constant(Tensor::vector(&[3.0, 4.0]));
        let p = g.mul(x, c).unwrap();
        let f = g.sum(p);
        let grads = g.backward(f).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn gather_scatters_back_with_repeats() {
        let mut g = DiffGraph::new();
        let x = g.param(Tensor::from_fn(&[3, 2], |i| i as f64));
        let r = g.gather_rows(x, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(r).data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
        let f = g.sum(r);
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(g.gather_rows(x, &[3]).is_err());
        assert!(g.gather_rows(x, &[]).is_err());
    }

    #[test]
    fn abs_gradient_is_sign() {
        let mut g = DiffGraph::new();
        let x = g.param(Tensor::vector(&[-2.0, 0.0, 3.0]));
        let a = g.abs(x);
        let f = g.sum(a);
        assert_eq!(g.value(f).item(), 5.0);
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut g = DiffGraph::new();
            let a = g.param(Tensor::from_fn(&[3, 4], |i| (i as f64).sin()));
            let b = g.param(Tensor::from_fn(&[4, 2], |i| (i as f64).cos()));
            let m = g.matmul(a, b).unwrap();
            let s = g.softmax(m);
            let f = g.sum_squares(s);
            let grads = g.backward(f).unwrap();
            (grads.get(a).unwrap().clone(), grads.get(b).unwrap().clone())
        };
        assert_eq!(build(), build());
    }
}

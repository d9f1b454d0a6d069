//! Reverse-mode autodiff over a linear tape. Ops are recorded in creation
//! order, which is already a topological order, so backward is a single
//! reverse sweep with `+=` accumulation at fan-out points.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels as k;
use crate::tensor::Tensor;
use crate::Float;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var },
    BatchNorm { input: Var, gamma: Var, beta: Var, saved: k::BnSaved<T> },
    Relu { input: Var },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    GlobalAvgPool { input: Var },
    Dense { input: Var, weight: Var },
    Softmax { input: Var },
    CrossEntropy { probs: Var, targets: Tensor<T> },
    MseLoss { a: Var, b: Var },
    AddScaled { a: Var, b: Var, alpha: T },
    Sum { input: Var },
    DotConst { input: Var, coeffs: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Register an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient, if backward has produced one.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn conv2d(&mut self, input: Var, weight: Var) -> Result<Var> {
        let out = k::conv2d_forward(self.value(input), self.value(weight))?;
        let rg = self.req(input) || self.req(weight);
        Ok(self.push(out, rg, Op::Conv2d { input, weight }))
    }

    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, saved) =
            k::bn_forward_train(self.value(input), self.value(gamma), self.value(beta), eps)?;
        let rg = self.req(input) || self.req(gamma) || self.req(beta);
        Ok(self.push(out, rg, Op::BatchNorm { input, gamma, beta, saved }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = k::relu_forward(self.value(input));
        let rg = self.req(input);
        self.push(out, rg, Op::Relu { input })
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = k::max_pool2_forward(self.value(input))?;
        let rg = self.req(input);
        Ok(self.push(out, rg, Op::MaxPool2 { input, argmax }))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = k::global_avg_pool_forward(self.value(input))?;
        let rg = self.req(input);
        Ok(self.push(out, rg, Op::GlobalAvgPool { input }))
    }

    pub fn dense(&mut self, input: Var, weight: Var) -> Result<Var> {
        let out = k::dense_forward(self.value(input), self.value(weight))?;
        let rg = self.req(input) || self.req(weight);
        Ok(self.push(out, rg, Op::Dense { input, weight }))
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let out = k::softmax_forward(self.value(input))?;
        let rg = self.req(input);
        Ok(self.push(out, rg, Op::Softmax { input }))
    }

    /// Batch-mean cross-entropy of fixed one-hot targets against `probs`.
    pub fn cross_entropy(&mut self, targets: Tensor<T>, probs: Var) -> Result<Var> {
        let loss = k::cross_entropy_forward(&targets, self.value(probs))?;
        let rg = self.req(probs);
        Ok(self.push(Tensor::scalar(loss), rg, Op::CrossEntropy { probs, targets }))
    }

    /// Mean squared difference over all elements; gradient flows to both sides.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let loss = k::mse_forward(self.value(a), self.value(b))?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(Tensor::scalar(loss), rg, Op::MseLoss { a, b }))
    }

    /// a + alpha * b, elementwise.
    pub fn add_scaled(&mut self, a: Var, b: Var, alpha: T) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                context: "add_scaled",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = self.value(a).clone();
        out.add_scaled_assign(self.value(b), alpha)?;
        let rg = self.req(a) || self.req(b);
        Ok(self.push(out, rg, Op::AddScaled { a, b, alpha }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let mut s = T::zero();
        for &v in self.value(input).data() {
            s = s + v;
        }
        let rg = self.req(input);
        self.push(Tensor::scalar(s), rg, Op::Sum { input })
    }

    /// Scalar projection sum(x * c) against fixed coefficients.
    pub fn dot_const(&mut self, input: Var, coeffs: Tensor<T>) -> Result<Var> {
        if self.value(input).shape() != coeffs.shape() {
            return Err(Error::ShapeMismatch {
                context: "dot_const",
                lhs: self.value(input).shape().to_vec(),
                rhs: coeffs.shape().to_vec(),
            });
        }
        let mut s = T::zero();
        for (&x, &c) in self.value(input).data().iter().zip(coeffs.data()) {
            s = s + x * c;
        }
        let rg = self.req(input);
        Ok(self.push(Tensor::scalar(s), rg, Op::DotConst { input, coeffs }))
    }

    /// Smallest distance of any recorded relu input to its kink at 0, and
    /// of any pooling window's winner to the runner-up. Finite differences
    /// are only trustworthy when this margin comfortably exceeds the step.
    pub fn kink_margin(&self) -> T {
        let mut margin = T::infinity();
        for n in &self.nodes {
            match &n.op {
                Op::Relu { input } => {
                    for &v in self.nodes[input.0].value.data() {
                        margin = margin.min(v.abs());
                    }
                }
                Op::MaxPool2 { input, argmax } => {
                    let inp = &self.nodes[input.0].value;
                    let is = inp.shape();
                    let (h, w) = (is[2], is[3]);
                    for (o, &winner) in argmax.iter().enumerate() {
                        let (oy, ox) = ((o / (w / 2)) % (h / 2), o % (w / 2));
                        let bc = o / ((h / 2) * (w / 2));
                        let best = inp.data()[winner];
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let idx = bc * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                            if idx != winner {
                                margin = margin.min(best - inp.data()[idx]);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Batch statistics saved by a batch-norm node (mean, biased variance).
    pub fn bn_batch_stats(&self, v: Var) -> Option<(&[T], &[T])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm { saved, .. } => Some((&saved.batch_mean[..], &saved.batch_var[..])),
            _ => None,
        }
    }

    fn accumulate(&mut self, v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.nodes[v.0].grad {
            Some(g) => g.add_scaled_assign(&delta, T::one()).expect("grad shape fixed"),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate across calls
    /// until `zero_grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar { shape: self.value(loss).shape().to_vec() });
        }
        if matches!(self.nodes[loss.0].op, Op::Leaf) {
            return Err(Error::NoGraph);
        }
        // seed and per-node upstream buffers for this pass
        let mut up: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        up[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(dout) = up[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            // record into persistent grad slot
            self.accumulate(Var(i), dout.clone());
            let send = |up: &mut Vec<Option<Tensor<T>>>, v: Var, delta: Tensor<T>| {
                match &mut up[v.0] {
                    Some(g) => g.add_scaled_assign(&delta, T::one()).expect("grad shape fixed"),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Conv2d { input, weight } => {
                    let (din, dw) = k::conv2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        &dout,
                    )?;
                    let (input, weight) = (*input, *weight);
                    send(&mut up, input, din);
                    send(&mut up, weight, dw);
                }
                Op::BatchNorm { input, gamma, beta, saved } => {
                    let (din, dg, db) = k::bn_backward(&self.nodes[gamma.0].value, saved, &dout);
                    let (input, gamma, beta) = (*input, *gamma, *beta);
                    send(&mut up, input, din);
                    send(&mut up, gamma, dg);
                    send(&mut up, beta, db);
                }
                Op::Relu { input } => {
                    let din = k::relu_backward(&self.nodes[input.0].value, &dout);
                    let input = *input;
                    send(&mut up, input, din);
                }
                Op::MaxPool2 { input, argmax } => {
                    let din =
                        k::max_pool2_backward(self.nodes[input.0].value.shape(), argmax, &dout);
                    let input = *input;
                    send(&mut up, input, din);
                }
                Op::GlobalAvgPool { input } => {
                    let din = k::global_avg_pool_backward(self.nodes[input.0].value.shape(), &dout);
                    let input = *input;
                    send(&mut up, input, din);
                }
                Op::Dense { input, weight } => {
                    let (din, dw) = k::dense_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        &dout,
                    );
                    let (input, weight) = (*input, *weight);
                    send(&mut up, input, din);
                    send(&mut up, weight, dw);
                }
                Op::Softmax { input } => {
                    let din = k::softmax_backward(&self.nodes[i].value, &dout);
                    let input = *input;
                    send(&mut up, input, din);
                }
                Op::CrossEntropy { probs, targets } => {
                    let g = dout.item()?;
                    let dp = k::cross_entropy_backward(targets, &self.nodes[probs.0].value, g);
                    let probs = *probs;
                    send(&mut up, probs, dp);
                }
                Op::MseLoss { a, b } => {
                    let g = dout.item()?;
                    let (da, db) =
                        k::mse_backward(&self.nodes[a.0].value, &self.nodes[b.0].value, g);
                    let (a, b) = (*a, *b);
                    send(&mut up, a, da);
                    send(&mut up, b, db);
                }
                Op::AddScaled { a, b, alpha } => {
                    let (a, b, alpha) = (*a, *b, *alpha);
                    let mut db = Tensor::zeros(dout.shape());
                    db.add_scaled_assign(&dout, alpha)?;
                    send(&mut up, a, dout.clone());
                    send(&mut up, b, db);
                }
                Op::Sum { input } => {
                    let g = dout.item()?;
                    let din = Tensor::full(self.nodes[input.0].value.shape(), g);
                    let input = *input;
                    send(&mut up, input, din);
                }
                Op::DotConst { input, coeffs } => {
                    let g = dout.item()?;
                    let din = coeffs.map(|c| c * g);
                    let input = *input;
                    send(&mut up, input, din);
                }
            }
        }
        Ok(())
    }
}

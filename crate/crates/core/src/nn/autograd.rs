//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Var`] owns its value and, when any input requires a gradient, the
//! inputs it was computed from. Graphs built from constants only keep no
//! history, so inference frees intermediates as soon as they go out of scope.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use super::kernels;
use super::tensor::{Real, Tensor};

enum Op<T> {
    Leaf,
    Conv2d { stride: usize, pad: usize },
    Norm { per_sample: bool, stats: Vec<(T, T)> },
    LeakyRelu(T),
    Tanh,
    Silu,
    Add,
    Scale(T),
    ChannelBias,
    Concat { split: usize },
    Upsample2x,
    Linear,
    L1,
    Mse,
    Bce(T),
    LeastSquares(T),
}

struct Node<T> {
    value: Tensor<T>,
    grad: RefCell<Option<Tensor<T>>>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    op: Op<T>,
}

pub struct Var<T = f32>(Rc<Node<T>>);

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Real> Var<T> {
    /// Leaf that collects a gradient.
    pub fn param(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            value,
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            op: Op::Leaf,
        }))
    }

    fn from_op(value: Tensor<T>, parents: Vec<Var<T>>, op: Op<T>) -> Self {
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        let (parents, op) = if requires_grad {
            (parents, op)
        } else {
            (Vec::new(), Op::Leaf)
        };
        Var(Rc::new(Node {
            value,
            grad: RefCell::new(None),
            requires_grad,
            parents,
            op,
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().clone()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, stride: usize, pad: usize) -> Self {
        let out = kernels::conv2d_forward(
            &self.0.value,
            &weight.0.value,
            bias.map(|b| &b.0.value),
            stride,
            pad,
        );
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Self::from_op(out, parents, Op::Conv2d { stride, pad })
    }

    /// Normalizes each (sample, channel) plane over its spatial extent.
    pub fn instance_norm(&self, gamma: &Var<T>, beta: &Var<T>) -> Self {
        self.norm(gamma, beta, true)
    }

    /// Normalizes each channel over batch and spatial extent, always with the
    /// statistics of the current batch.
    pub fn batch_norm(&self, gamma: &Var<T>, beta: &Var<T>) -> Self {
        self.norm(gamma, beta, false)
    }

    fn norm(&self, gamma: &Var<T>, beta: &Var<T>, per_sample: bool) -> Self {
        let (out, stats) =
            kernels::norm_forward(&self.0.value, &gamma.0.value, &beta.0.value, per_sample);
        Self::from_op(
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Op::Norm { per_sample, stats },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Self {
        let s = T::lit(slope);
        let out = self
            .0
            .value
            .map(|v| if v > T::zero() { v } else { v * s });
        Self::from_op(out, vec![self.clone()], Op::LeakyRelu(s))
    }

    pub fn relu(&self) -> Self {
        self.leaky_relu(0.0)
    }

    pub fn tanh(&self) -> Self {
        let out = self.0.value.map(|v| v.tanh());
        Self::from_op(out, vec![self.clone()], Op::Tanh)
    }

    pub fn silu(&self) -> Self {
        let out = self.0.value.map(|v| v * sigmoid(v));
        Self::from_op(out, vec![self.clone()], Op::Silu)
    }

    pub fn add(&self, other: &Var<T>) -> Self {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let out = self.0.value.zip_map(&other.0.value, |a, b| a + b);
        Self::from_op(out, vec![self.clone(), other.clone()], Op::Add)
    }

    pub fn scale(&self, k: f64) -> Self {
        let k = T::lit(k);
        let out = self.0.value.map(|v| v * k);
        Self::from_op(out, vec![self.clone()], Op::Scale(k))
    }

    /// Adds `bias[n, c]` to every pixel of plane `(n, c)`.
    pub fn add_channel_bias(&self, bias: &Var<T>) -> Self {
        let out = kernels::channel_bias_forward(&self.0.value, &bias.0.value);
        Self::from_op(out, vec![self.clone(), bias.clone()], Op::ChannelBias)
    }

    pub fn concat_channels(&self, other: &Var<T>) -> Self {
        let out = kernels::concat_channels(&self.0.value, &other.0.value);
        let split = self.shape()[1];
        Self::from_op(out, vec![self.clone(), other.clone()], Op::Concat { split })
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2x(&self) -> Self {
        let out = kernels::upsample2x(&self.0.value);
        Self::from_op(out, vec![self.clone()], Op::Upsample2x)
    }

    /// `x[N, F] · wᵀ + b` with `w: [O, F]`, `b: [O]`.
    pub fn linear(&self, weight: &Var<T>, bias: &Var<T>) -> Self {
        let out = kernels::linear_forward(&self.0.value, &weight.0.value, &bias.0.value);
        Self::from_op(
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Op::Linear,
        )
    }

    /// Mean absolute difference.
    pub fn l1_loss(&self, other: &Var<T>) -> Self {
        assert_eq!(self.shape(), other.shape(), "l1: shape mismatch");
        let n = T::from_usize(self.0.value.len()).unwrap();
        let s: T = self
            .0
            .value
            .data()
            .iter()
            .zip(other.0.value.data())
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        Self::from_op(
            Tensor::scalar(s / n),
            vec![self.clone(), other.clone()],
            Op::L1,
        )
    }

    /// Mean squared difference.
    pub fn mse_loss(&self, other: &Var<T>) -> Self {
        assert_eq!(self.shape(), other.shape(), "mse: shape mismatch");
        let n = T::from_usize(self.0.value.len()).unwrap();
        let s: T = self
            .0
            .value
            .data()
            .iter()
            .zip(other.0.value.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        Self::from_op(
            Tensor::scalar(s / n),
            vec![self.clone(), other.clone()],
            Op::Mse,
        )
    }

    /// Mean binary cross-entropy of logits against a constant target.
    pub fn bce_with_logits(&self, target: f64) -> Self {
        let y = T::lit(target);
        let n = T::from_usize(self.0.value.len()).unwrap();
        let s: T = self
            .0
            .value
            .data()
            .iter()
            .map(|&z| z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln())
            .sum();
        Self::from_op(Tensor::scalar(s / n), vec![self.clone()], Op::Bce(y))
    }

    /// Mean of `(z - target)²`, the least-squares adversarial criterion.
    pub fn least_squares(&self, target: f64) -> Self {
        let y = T::lit(target);
        let n = T::from_usize(self.0.value.len()).unwrap();
        let s: T = self
            .0
            .value
            .data()
            .iter()
            .map(|&z| (z - y) * (z - y))
            .sum();
        Self::from_op(
            Tensor::scalar(s / n),
            vec![self.clone()],
            Op::LeastSquares(y),
        )
    }

    /// Accumulates `d self / d leaf` into every reachable leaf that requires a gradient.
    pub fn backward(&self) {
        if !self.0.requires_grad {
            return;
        }
        let order = self.topo_order();
        *self.0.grad.borrow_mut() = Some(Tensor::full(self.shape(), T::one()));
        for node in order.iter().rev() {
            let Some(g) = node.0.grad.borrow().clone() else {
                continue;
            };
            if node.0.parents.is_empty() {
                continue;
            }
            let grads = node.local_grads(&g);
            for (parent, pg) in node.0.parents.iter().zip(grads) {
                let Some(pg) = pg else { continue };
                let mut slot = parent.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => *slot = Some(pg),
                }
            }
            if !node.0.parents.is_empty() && !Rc::ptr_eq(&node.0, &self.0) {
                // interior gradients are no longer needed once propagated
                node.0.grad.borrow_mut().take();
            }
        }
    }

    fn topo_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node<T>> = HashSet::new();
        // iterative post-order DFS
        let mut stack: Vec<(Var<T>, bool)> = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if !seen.insert(Rc::as_ptr(&v.0)) {
                continue;
            }
            stack.push((v.clone(), true));
            for p in &v.0.parents {
                if p.0.requires_grad && !seen.contains(&Rc::as_ptr(&p.0)) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    fn local_grads(&self, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let node = &self.0;
        let p = &node.parents;
        let need = |i: usize| p[i].0.requires_grad;
        let pv = |i: usize| &p[i].0.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { stride, pad } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    pv(0),
                    pv(1),
                    g,
                    *stride,
                    *pad,
                    need(0),
                    need(1),
                    p.len() > 2 && need(2),
                );
                let mut out = vec![dx, dw];
                if p.len() > 2 {
                    out.push(db);
                }
                out
            }
            Op::Norm { per_sample, stats } => {
                let (dx, dg, db) =
                    kernels::norm_backward(pv(0), pv(1), g, stats, *per_sample);
                vec![
                    need(0).then_some(dx),
                    need(1).then_some(dg),
                    need(2).then_some(db),
                ]
            }
            Op::LeakyRelu(s) => {
                let s = *s;
                vec![Some(pv(0).zip_map(g, |x, gy| if x > T::zero() { gy } else { gy * s }))]
            }
            Op::Tanh => vec![Some(node.value.zip_map(g, |y, gy| gy * (T::one() - y * y)))],
            Op::Silu => vec![Some(pv(0).zip_map(g, |x, gy| {
                let sg = sigmoid(x);
                gy * (sg + x * sg * (T::one() - sg))
            }))],
            Op::Add => vec![need(0).then(|| g.clone()), need(1).then(|| g.clone())],
            Op::Scale(k) => {
                let k = *k;
                vec![Some(g.map(|v| v * k))]
            }
            Op::ChannelBias => {
                let db = kernels::channel_bias_backward(g, pv(1).shape());
                vec![need(0).then(|| g.clone()), need(1).then_some(db)]
            }
            Op::Concat { split } => {
                let (ga, gb) = kernels::split_channels(g, *split);
                vec![need(0).then_some(ga), need(1).then_some(gb)]
            }
            Op::Upsample2x => vec![Some(kernels::upsample2x_backward(g))],
            Op::Linear => {
                let (dx, dw, db) = kernels::linear_backward(pv(0), pv(1), g);
                vec![
                    need(0).then_some(dx),
                    need(1).then_some(dw),
                    need(2).then_some(db),
                ]
            }
            Op::L1 => {
                let gs = g.item() / T::from_usize(pv(0).len()).unwrap();
                let da = pv(0).zip_map(pv(1), |a, b| {
                    if a > b {
                        gs
                    } else if a < b {
                        -gs
                    } else {
                        T::zero()
                    }
                });
                let db = need(1).then(|| da.map(|v| -v));
                vec![need(0).then_some(da), db]
            }
            Op::Mse => {
                let k = T::lit(2.0) * g.item() / T::from_usize(pv(0).len()).unwrap();
                let da = pv(0).zip_map(pv(1), |a, b| k * (a - b));
                let db = need(1).then(|| da.map(|v| -v));
                vec![need(0).then_some(da), db]
            }
            Op::Bce(y) => {
                let y = *y;
                let k = g.item() / T::from_usize(pv(0).len()).unwrap();
                vec![Some(pv(0).map(|z| k * (sigmoid(z) - y)))]
            }
            Op::LeastSquares(y) => {
                let y = *y;
                let k = T::lit(2.0) * g.item() / T::from_usize(pv(0).len()).unwrap();
                vec![Some(pv(0).map(|z| k * (z - y)))]
            }
        }
    }
}

/// Sums scalar terms with weights, skipping zero weights.
pub fn weighted_sum<T: Real>(terms: &[(f64, &Var<T>)]) -> Var<T> {
    let mut acc: Option<Var<T>> = None;
    for &(w, v) in terms {
        if w == 0.0 {
            continue;
        }
        let term = if w == 1.0 { v.clone() } else { v.scale(w) };
        acc = Some(match acc {
            Some(a) => a.add(&term),
            None => term,
        });
    }
    acc.unwrap_or_else(|| Var::constant(Tensor::scalar(T::zero())))
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

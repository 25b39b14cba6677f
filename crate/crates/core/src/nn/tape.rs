//! Reverse-mode differentiation over a linear record of kernel calls.

use alloc::vec;
use alloc::vec::Vec;

use super::conv::{self, ConvGeom};
use super::ops::{self, BnSaved, Mode, RunningStats};
use super::Tensor;
use crate::error::{invalid, shape_err};
use crate::{Result, Scalar};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        transposed: bool,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved<T>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Concat {
        parts: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records forward computations so gradients can be propagated back.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients of every tape value that requires one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = conv::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
        )?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            y,
            Op::Conv {
                x,
                w,
                b,
                geom,
                transposed: false,
            },
            rg,
        ))
    }

    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    ) -> Result<Var> {
        let y = conv::conv2d_transpose(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
        )?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            y,
            Op::Conv {
                x,
                w,
                b,
                geom,
                transposed: true,
            },
            rg,
        ))
    }

    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let (y, saved) = ops::batch_norm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running,
            mode,
        )?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let y = ops::leaky_relu(self.value(x), slope);
        let rg = self.rg(x);
        self.push(y, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ops::concat(&refs)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Add { a, b }, rg))
    }

    pub fn crop_center(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (y, top, left) = ops::crop_center(self.value(x), h, w)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Crop { x, top, left }, rg))
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let l = ops::mse_loss(self.value(pred), self.value(target))?;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(T::from_f64(l)), Op::Mse { pred, target }, rg))
    }

    /// Backpropagates from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).numel() != 1 {
            return Err(invalid!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            ));
        }
        self.backward_seeded(
            root,
            Tensor::from_vec(self.value(root).shape().to_vec(), vec![T::ONE])?,
        )
    }

    /// Backpropagates `seed` (the gradient of some scalar with respect to `root`).
    ///
    /// Gradients of intermediate values are released once consumed; leaves keep theirs.
    pub fn backward_seeded(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(root).shape() {
            return Err(shape_err!(
                "seed shape {:?} does not match root {:?}",
                seed.shape(),
                self.value(root).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                x,
                w,
                b,
                geom,
                transposed,
            } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                if let Some(b) = b {
                    if self.rg(*b) {
                        self.accumulate(grads, *b, conv::channel_sum(g)?);
                    }
                }
                if *transposed {
                    // y = A^T x  =>  dx = A g, dW from the forward-conv weight gradient with roles swapped
                    if self.rg(*x) {
                        self.accumulate(grads, *x, conv::conv_forward(g, wv, geom)?);
                    }
                    if self.rg(*w) {
                        self.accumulate(grads, *w, conv::conv_backward_weight(g, xv, geom)?);
                    }
                } else {
                    if self.rg(*x) {
                        let s = xv.shape();
                        self.accumulate(
                            grads,
                            *x,
                            conv::conv_backward_input(g, wv, geom, (s[2], s[3]))?,
                        );
                    }
                    if self.rg(*w) {
                        self.accumulate(grads, *w, conv::conv_backward_weight(xv, g, geom)?);
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let (dx, dg, db) = ops::batch_norm_backward(g, self.value(*gamma), saved)?;
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dg);
                self.accumulate(grads, *beta, db);
            }
            Op::LeakyRelu { x, slope } => {
                let dx = ops::leaky_relu_backward(self.value(*x), g, *slope);
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { parts } => {
                let chans: Vec<usize> = parts.iter().map(|p| self.value(*p).shape()[1]).collect();
                for (p, d) in parts.iter().zip(ops::concat_backward(g, &chans)?) {
                    self.accumulate(grads, *p, d);
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Crop { x, top, left } => {
                let d = ops::crop_backward(g, self.value(*x).shape(), *top, *left)?;
                self.accumulate(grads, *x, d);
            }
            Op::Mse { pred, target } => {
                let up = g.data()[0].to_f64();
                let (p, t) = (self.value(*pred), self.value(*target));
                self.accumulate(grads, *pred, ops::mse_backward(p, t, up));
                self.accumulate(grads, *target, ops::mse_backward(t, p, up));
            }
        }
        Ok(())
    }
}

//! A small reverse-mode autodiff tape over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over
//! the node list is a valid topological order for backpropagation.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::{self, ResizePlan};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{sigmoid, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Positive/negative pixel weights for class-balanced cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl ClassWeights {
    /// Weights each class by the frequency of the other one.
    pub fn balanced(target: &Tensor) -> Self {
        let n = target.numel() as f64;
        let pos = target.data().iter().filter(|&&t| t > 0.5).count() as f64;
        Self {
            positive: (n - pos) / n,
            negative: pos / n,
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        pad: usize,
    },
    Relu(NodeId),
    MaxPool2 {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Resize {
        input: NodeId,
        plan: ResizePlan,
    },
    Add(NodeId, NodeId),
    Scale {
        input: NodeId,
        factor: NodeId,
    },
    Sigmoid(NodeId),
    BceWithLogits {
        logits: NodeId,
        target: Tensor,
        weights: Option<ClassWeights>,
    },
    BoundaryIouPenalty {
        logits: NodeId,
        target_boundary: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; no gradient is reported for it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// The leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_leaves.get(&id) {
            return node;
        }
        let node = self.push(store.value(id).clone(), Op::Leaf);
        self.nodes[node.0].param = Some(id);
        self.param_leaves.insert(id, node);
        node
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let x = self.value(input);
        let wt = self.value(weight);
        let [co, ci, k, k2] = wt.shape()[..] else {
            return Err(Error::shape("conv2d weight rank", &[0, 0, 0, 0], wt.shape()));
        };
        if x.shape().len() != 3 || x.shape()[0] != ci {
            return Err(Error::shape("conv2d input channels", &[ci], x.shape()));
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::Config(format!("conv kernel must be square and odd, got {k}x{k2}")));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [co] {
                return Err(Error::shape("conv2d bias", &[co], self.value(b).shape()));
            }
        }
        let pad = k / 2;
        let out = kernels::conv2d_forward(x, wt, bias.map(|b| self.value(b)), pad);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            },
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(|v| v.max(0.0));
        self.push(out, Op::Relu(input))
    }

    pub fn maxpool2(&mut self, input: NodeId) -> NodeId {
        let (out, argmax) = kernels::maxpool2_forward(self.value(input));
        self.push(out, Op::MaxPool2 { input, argmax })
    }

    /// Bilinear resampling to `(height, width)`.
    pub fn resize(&mut self, input: NodeId, height: usize, width: usize) -> NodeId {
        let (_, h, w) = self.value(input).chw();
        let plan = ResizePlan::new(h, w, height, width);
        let out = plan.forward(self.value(input));
        self.push(out, Op::Resize { input, plan })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Multiplies every element of `input` by the scalar node `factor`.
    pub fn scale(&mut self, input: NodeId, factor: NodeId) -> NodeId {
        let f = self.value(factor).item();
        let out = self.value(input).map(|v| v * f);
        self.push(out, Op::Scale { input, factor })
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(sigmoid);
        self.push(out, Op::Sigmoid(input))
    }

    /// Summed binary cross-entropy between `sigmoid(logits)` and a binary
    /// target of the same shape. Produces a scalar node.
    pub fn bce_with_logits(
        &mut self,
        logits: NodeId,
        target: &Tensor,
        weights: Option<ClassWeights>,
    ) -> Result<NodeId> {
        let x = self.value(logits);
        if x.shape() != target.shape() {
            return Err(Error::shape("bce target", x.shape(), target.shape()));
        }
        let loss = crate::losses::bce_with_logits_weighted(x, target, weights);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                target: target.clone(),
                weights,
            },
        ))
    }

    /// Boundary IoU penalty of `sigmoid(logits)` against a binary mask.
    pub fn boundary_iou_penalty(&mut self, logits: NodeId, target: &Tensor) -> Result<NodeId> {
        let x = self.value(logits);
        if x.shape() != target.shape() || x.chw().0 != 1 {
            return Err(Error::shape("boundary penalty target", x.shape(), target.shape()));
        }
        let (_, h, w) = target.chw();
        let target_boundary = kernels::soft_boundary(target.data(), h, w);
        let prob: Vec<f64> = x.data().iter().map(|&v| sigmoid(v)).collect();
        let penalty = crate::losses::boundary_iou_from_parts(&prob, &target_boundary, h, w);
        Ok(self.push(
            Tensor::scalar(penalty),
            Op::BoundaryIouPenalty {
                logits,
                target_boundary,
            },
        ))
    }

    /// Sums scalar nodes left to right.
    pub fn sum_scalars(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Config("sum of zero loss terms".into()))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Backpropagates from the scalar node `root`.
    pub fn backward(&self, root: NodeId) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));

        fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(existing) => existing.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    pad,
                } => {
                    let (dx, dw, db) =
                        kernels::conv2d_backward(self.value(*input), self.value(*weight), *pad, &g);
                    accumulate(&mut grads[input.0], dx);
                    accumulate(&mut grads[weight.0], dw);
                    if let Some(b) = bias {
                        accumulate(&mut grads[b.0], db);
                    }
                }
                Op::Relu(input) => {
                    let x = self.value(*input);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::MaxPool2 { input, argmax } => {
                    let mut dx = Tensor::zeros(self.value(*input).shape());
                    let dst = dx.data_mut();
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        dst[src] += gv;
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::Resize { input, plan } => {
                    accumulate(&mut grads[input.0], plan.backward(&g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Scale { input, factor } => {
                    let f = self.value(*factor).item();
                    let x = self.value(*input);
                    let df: f64 = g.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
                    accumulate(&mut grads[factor.0], Tensor::scalar(df));
                    accumulate(&mut grads[input.0], g.map(|v| v * f));
                }
                Op::Sigmoid(input) => {
                    let y = &node.value;
                    let mut dx = g;
                    for (d, &p) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d *= p * (1.0 - p);
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::BceWithLogits {
                    logits,
                    target,
                    weights,
                } => {
                    let upstream = g.item();
                    let x = self.value(*logits);
                    let dx: Vec<f64> = x
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&v, &t)| {
                            let (wp, wn) = weights.map_or((1.0, 1.0), |w| (w.positive, w.negative));
                            let p = sigmoid(v);
                            // d/dx [-wp*t*log p - wn*(1-t)*log(1-p)]
                            upstream * (wp * t * (p - 1.0) + wn * (1.0 - t) * p)
                        })
                        .collect();
                    accumulate(
                        &mut grads[logits.0],
                        Tensor::from_vec(x.shape(), dx).expect("bce grad"),
                    );
                }
                Op::BoundaryIouPenalty {
                    logits,
                    target_boundary,
                } => {
                    let x = self.value(*logits);
                    let (_, h, w) = x.chw();
                    let prob: Vec<f64> = x.data().iter().map(|&v| sigmoid(v)).collect();
                    let dprob = crate::losses::boundary_iou_grad(&prob, target_boundary, h, w);
                    let dx: Vec<f64> = dprob
                        .iter()
                        .zip(&prob)
                        .map(|(d, p)| g.item() * d * p * (1.0 - p))
                        .collect();
                    accumulate(
                        &mut grads[logits.0],
                        Tensor::from_vec(x.shape(), dx).expect("penalty grad"),
                    );
                }
            }
        }

        Gradients {
            nodes: grads,
            params: self.param_leaves.clone(),
        }
    }
}

/// Node gradients after a backward sweep.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: HashMap<ParamId, NodeId>,
}

impl Gradients {
    /// Gradient with respect to a node, if any flowed into it.
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to a parameter, `None` when the parameter did
    /// not take part in the graph.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&n| self.node(n))
    }

    /// Adds every parameter gradient into `acc`, indexed like the store.
    pub fn accumulate_into(&self, acc: &mut [Tensor]) {
        let mut ids: Vec<_> = self.params.iter().collect();
        ids.sort();
        for (pid, node) in ids {
            if let Some(g) = self.node(*node) {
                acc[pid.index()].add_assign(g);
            }
        }
    }
}

//! The operation tape: forward recording and one-pass reverse accumulation.

use log::warn;

use super::kernels;
use super::{check_same_shape, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Batchnorm hyperparameters. Epsilon guards the variance; momentum is the
/// retention factor of the running statistics.
#[derive(Clone, Copy, Debug)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            eps: 1e-5,
            momentum: 0.99,
        }
    }
}

/// Running mean/variance buffers owned by the model, updated on train-mode
/// forward passes.
#[derive(Clone, Debug)]
pub struct BnRunning {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub initialized: bool,
    warned: bool,
}

impl BnRunning {
    pub fn new(channels: usize) -> Self {
        BnRunning {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            initialized: false,
            warned: false,
        }
    }
}

enum Rule<S: Scalar> {
    Add {
        a: NodeId,
        b: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Upsample {
        input: NodeId,
    },
    Relu {
        input: NodeId,
    },
    Selu {
        input: NodeId,
    },
    Sigmoid {
        input: NodeId,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Tensor<S>,
        inv_std: Vec<S>,
        train: bool,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    CompositeLoss {
        pred: NodeId,
        target: Tensor<S>,
        lambda: S,
        epsilon: S,
        clamp: S,
    },
    BceLoss {
        pred: NodeId,
        target: Tensor<S>,
        clamp: S,
    },
    WeightedSum {
        input: NodeId,
        weights: Tensor<S>,
    },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    requires_grad: bool,
    rule: Option<Rule<S>>,
}

/// Reverse-mode autodiff record. Operations append in topological order; one
/// [`Tape::backward`] sweep visits each recorded entry exactly once.
pub struct Tape<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf tensor. Gradients accumulate only for leaves created
    /// with `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, None)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` root with respect to `id`, if one was
    /// accumulated.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor<S>, requires_grad: bool, rule: Option<Rule<S>>) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            rule,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        check_same_shape("add", self.value(a), self.value(b))?;
        let out = kernels::add_forward(self.value(a), self.value(b));
        let req = self.any_requires(&[a, b]);
        Ok(self.push(out, req, Some(Rule::Add { a, b })))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 4
            || sb.len() != 4
            || sa[0] != sb[0]
            || sa[2] != sb[2]
            || sa[3] != sb[3]
        {
            return Err(Error::ShapeMismatch {
                context: "concat (batch/spatial axes must match)".into(),
                expected: sa.to_vec(),
                got: sb.to_vec(),
            });
        }
        let out = kernels::concat_forward(self.value(a), self.value(b));
        let req = self.any_requires(&[a, b]);
        Ok(self.push(out, req, Some(Rule::Concat { a, b })))
    }

    /// Same-padding convolution; kernel must be 3×3 or 1×1.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let si = self.value(input).shape().to_vec();
        let sk = self.value(kernel).shape().to_vec();
        let sb = self.value(bias).shape().to_vec();
        if si.len() != 4 || sk.len() != 4 {
            return Err(Error::ShapeMismatch {
                context: "conv2d (rank-4 input/kernel required)".into(),
                expected: si,
                got: sk,
            });
        }
        let k = sk[2];
        if sk[3] != k || (k != 1 && k != 3) {
            return Err(Error::ShapeMismatch {
                context: "conv2d (kernel must be 3x3 or 1x1)".into(),
                expected: vec![sk[0], sk[1], 3, 3],
                got: sk,
            });
        }
        if sk[1] != si[1] {
            return Err(Error::ShapeMismatch {
                context: format!("conv2d (kernel channels vs input {si:?})"),
                expected: si,
                got: sk,
            });
        }
        if sb != [sk[0]] {
            return Err(Error::ShapeMismatch {
                context: "conv2d (bias length vs filter count)".into(),
                expected: vec![sk[0]],
                got: sb,
            });
        }
        let out = kernels::conv2d_forward(self.value(input), self.value(kernel), self.value(bias));
        let req = self.any_requires(&[input, kernel, bias]);
        Ok(self.push(
            out,
            req,
            Some(Rule::Conv2d {
                input,
                kernel,
                bias,
            }),
        ))
    }

    pub fn maxpool2d(&mut self, input: NodeId) -> Result<NodeId> {
        let s = self.value(input).shape().to_vec();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(Error::ShapeMismatch {
                context: "maxpool2d (even spatial dims required)".into(),
                expected: vec![s[0], s[1], s[2] / 2 * 2, s[3] / 2 * 2],
                got: s,
            });
        }
        let (out, argmax) = kernels::maxpool_forward(self.value(input));
        let req = self.any_requires(&[input]);
        Ok(self.push(out, req, Some(Rule::MaxPool { input, argmax })))
    }

    pub fn upsample2d(&mut self, input: NodeId) -> Result<NodeId> {
        let s = self.value(input).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                context: "upsample2d (rank-4 input required)".into(),
                expected: vec![0, 0, 0, 0],
                got: s,
            });
        }
        let out = kernels::upsample_forward(self.value(input));
        let req = self.any_requires(&[input]);
        Ok(self.push(out, req, Some(Rule::Upsample { input })))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = kernels::relu_forward(self.value(input));
        let req = self.any_requires(&[input]);
        self.push(out, req, Some(Rule::Relu { input }))
    }

    pub fn selu(&mut self, input: NodeId) -> NodeId {
        let out = kernels::selu_forward(self.value(input));
        let req = self.any_requires(&[input]);
        self.push(out, req, Some(Rule::Selu { input }))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let out = kernels::sigmoid_forward(self.value(input));
        let req = self.any_requires(&[input]);
        self.push(out, req, Some(Rule::Sigmoid { input }))
    }

    /// Batch normalization. Train mode normalizes with batch statistics and
    /// folds them into `running` with the configured momentum; infer mode
    /// normalizes with the running statistics as-is.
    pub fn batchnorm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BnMode,
        cfg: BnConfig,
        running: &mut BnRunning,
    ) -> Result<NodeId> {
        let s = self.value(input).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                context: "batchnorm (rank-4 input required)".into(),
                expected: vec![0, 0, 0, 0],
                got: s,
            });
        }
        let c = s[1];
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::ShapeMismatch {
                context: "batchnorm (gamma/beta length vs channels)".into(),
                expected: vec![c],
                got: self.value(gamma).shape().to_vec(),
            });
        }
        if running.mean.len() != c {
            return Err(Error::ShapeMismatch {
                context: "batchnorm (running stats length vs channels)".into(),
                expected: vec![c],
                got: vec![running.mean.len()],
            });
        }
        let train = mode == BnMode::Train;
        if !train && !running.initialized && !running.warned {
            warn!("batchnorm: infer mode before any train step, using initialized running stats (mean 0, var 1)");
            running.warned = true;
        }
        let rm: Vec<S> = running.mean.iter().map(|&v| S::of_f32(v)).collect();
        let rv: Vec<S> = running.var.iter().map(|&v| S::of_f32(v)).collect();
        let fwd = kernels::batchnorm_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            S::of_f64(cfg.eps),
            train,
            &rm,
            &rv,
        );
        if let Some((bm, bv)) = &fwd.batch_stats {
            let mom = cfg.momentum as f32;
            for ((r, &b), (rv_i, &bv_i)) in running
                .mean
                .iter_mut()
                .zip(bm.iter())
                .zip(running.var.iter_mut().zip(bv.iter()))
            {
                *r = mom * *r + (1.0 - mom) * b.as_f32();
                *rv_i = mom * *rv_i + (1.0 - mom) * bv_i.as_f32();
            }
            running.initialized = true;
        }
        let req = self.any_requires(&[input, gamma, beta]);
        Ok(self.push(
            fwd.output,
            req,
            Some(Rule::BatchNorm {
                input,
                gamma,
                beta,
                normalized: fwd.normalized,
                inv_std: fwd.inv_std,
                train,
            }),
        ))
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let s = self.value(input).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                context: "global_avg_pool (rank-4 input required)".into(),
                expected: vec![0, 0, 0, 0],
                got: s,
            });
        }
        let out = kernels::global_avg_pool_forward(self.value(input));
        let req = self.any_requires(&[input]);
        Ok(self.push(out, req, Some(Rule::GlobalAvgPool { input })))
    }

    /// Weighted cross-entropy + dice complement against a constant target.
    pub fn composite_loss(
        &mut self,
        pred: NodeId,
        target: &Tensor<S>,
        lambda: S,
        epsilon: S,
        clamp: S,
    ) -> Result<NodeId> {
        check_same_shape("composite_loss", self.value(pred), target)?;
        if !self.value(pred).all_finite() || !target.all_finite() {
            return Err(Error::non_finite("composite_loss", "input contains non-finite values"));
        }
        let loss =
            kernels::composite_loss_forward(self.value(pred), target, lambda, epsilon, clamp);
        let req = self.any_requires(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            req,
            Some(Rule::CompositeLoss {
                pred,
                target: target.clone(),
                lambda,
                epsilon,
                clamp,
            }),
        ))
    }

    /// Mean two-class binary cross-entropy against a constant target.
    pub fn bce_loss(&mut self, pred: NodeId, target: &Tensor<S>, clamp: S) -> Result<NodeId> {
        check_same_shape("bce_loss", self.value(pred), target)?;
        if !self.value(pred).all_finite() || !target.all_finite() {
            return Err(Error::non_finite("bce_loss", "input contains non-finite values"));
        }
        let loss = kernels::bce_loss_forward(self.value(pred), target, clamp);
        let req = self.any_requires(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            req,
            Some(Rule::BceLoss {
                pred,
                target: target.clone(),
                clamp,
            }),
        ))
    }

    /// Scalar reduction `Σ wᵢ·xᵢ` with constant weights.
    pub fn weighted_sum(&mut self, input: NodeId, weights: &Tensor<S>) -> Result<NodeId> {
        check_same_shape("weighted_sum", self.value(input), weights)?;
        let v = kernels::weighted_sum_forward(self.value(input), weights);
        let req = self.any_requires(&[input]);
        Ok(self.push(
            Tensor::scalar(v),
            req,
            Some(Rule::WeightedSum {
                input,
                weights: weights.clone(),
            }),
        ))
    }

    fn accumulate(grads: &mut [Option<Tensor<S>>], id: NodeId, delta: Tensor<S>) {
        match &mut grads[id.0] {
            Some(g) => {
                for (dst, src) in g.data_mut().iter_mut().zip(delta.data()) {
                    *dst += *src;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse sweep from a scalar root. Populates one gradient per
    /// gradient-requiring node reachable from `root`; unreachable
    /// `requires_grad` leaves read back as zero via [`Tape::grad_or_zeros`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::ShapeMismatch {
                context: "backward (scalar root required)".into(),
                expected: vec![1],
                got: self.value(root).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(S::one()));

        for i in (0..=root.0).rev() {
            if grads[i].is_none() || self.nodes[i].rule.is_none() {
                continue;
            }
            // Interior gradients are consumed here; leaf gradients stay for
            // the caller.
            let upstream = grads[i].take().unwrap();
            let rule = self.nodes[i].rule.as_ref().unwrap();
            match rule {
                Rule::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a.0].requires_grad {
                        Self::accumulate(&mut grads, a, upstream.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        Self::accumulate(&mut grads, b, upstream);
                    }
                }
                Rule::Concat { a, b } => {
                    let (a, b) = (*a, *b);
                    let (ga, gb) = kernels::concat_backward(
                        &upstream,
                        self.nodes[a.0].value.shape(),
                        self.nodes[b.0].value.shape(),
                    );
                    if self.nodes[a.0].requires_grad {
                        Self::accumulate(&mut grads, a, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        Self::accumulate(&mut grads, b, gb);
                    }
                }
                Rule::Conv2d {
                    input,
                    kernel,
                    bias,
                } => {
                    let (input, kernel, bias) = (*input, *kernel, *bias);
                    let (gi, gk, gb) = kernels::conv2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[kernel.0].value,
                        &upstream,
                    );
                    if self.nodes[input.0].requires_grad {
                        Self::accumulate(&mut grads, input, gi);
                    }
                    if self.nodes[kernel.0].requires_grad {
                        Self::accumulate(&mut grads, kernel, gk);
                    }
                    if self.nodes[bias.0].requires_grad {
                        Self::accumulate(&mut grads, bias, gb);
                    }
                }
                Rule::MaxPool { input, argmax } => {
                    let input = *input;
                    if self.nodes[input.0].requires_grad {
                        let gi = kernels::maxpool_backward(
                            argmax,
                            &upstream,
                            self.nodes[input.0].value.shape(),
                        );
                        Self::accumulate(&mut grads, input, gi);
                    }
                }
                Rule::Upsample { input } => {
                    let input = *input;
                    if self.nodes[input.0].requires_grad {
                        let gi = kernels::upsample_backward(
                            &upstream,
                            self.nodes[input.0].value.shape(),
                        );
                        Self::accumulate(&mut grads, input, gi);
                    }
                }
                Rule::Relu { input } => {
                    let input = *input;
                    if self.nodes[input.0].requires_grad {
                        let gi = kernels::relu_backward(&self.nodes[input.0].value, &upstream);
                        Self::accumulate(&mut grads, input, gi);
                    }
                }
                Rule::Selu { input } => {
                    let input = *input;
                    if self.nodes[input.0].requires_grad {
                        let gi = kernels::selu_backward(&self.nodes[input.0].value, &upstream);
                        Self::accumulate(&mut grads, input, gi);
                    }
                }
                Rule::Sigmoid { input } => {
                    let input = *input;
                    if self.nodes[input.0].requires_grad {
                        let gi = kernels::sigmoid_backward(&self.nodes[i].value, &upstream);
                        Self::accumulate(&mut grads, input, gi);
                    }
                }
                Rule::BatchNorm {
                    input,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                    train,
                } => {
                    let (input, gamma, beta) = (*input, *gamma, *beta);
                    let (gi, gg, gb) = kernels::batchnorm_backward(
                        normalized,
                        inv_std,
                        &self.nodes[gamma.0].value,
                        &upstream,
                        *train,
                    );
                    if self.nodes[input.0].requires_grad {
                        Self::accumulate(&mut grads, input, gi);
                    }
                    if self.nodes[gamma.0].requires_grad {
                        Self::accumulate(&mut grads, gamma, gg);
                    }
                    if self.nodes[beta.0].requires_grad {
                        Self::accumulate(&mut grads, beta, gb);
                    }
                }
                Rule::GlobalAvgPool { input } => {
                    let input = *input;
                    if self.nodes[input.0].requires_grad {
                        let gi = kernels::global_avg_pool_backward(
                            &upstream,
                            self.nodes[input.0].value.shape(),
                        );
                        Self::accumulate(&mut grads, input, gi);
                    }
                }
                Rule::CompositeLoss {
                    pred,
                    target,
                    lambda,
                    epsilon,
                    clamp,
                } => {
                    let pred = *pred;
                    if self.nodes[pred.0].requires_grad {
                        let gi = kernels::composite_loss_backward(
                            &self.nodes[pred.0].value,
                            target,
                            *lambda,
                            *epsilon,
                            *clamp,
                            upstream.item(),
                        );
                        Self::accumulate(&mut grads, pred, gi);
                    }
                }
                Rule::BceLoss {
                    pred,
                    target,
                    clamp,
                } => {
                    let pred = *pred;
                    if self.nodes[pred.0].requires_grad {
                        let gi = kernels::bce_loss_backward(
                            &self.nodes[pred.0].value,
                            target,
                            *clamp,
                            upstream.item(),
                        );
                        Self::accumulate(&mut grads, pred, gi);
                    }
                }
                Rule::WeightedSum { input, weights } => {
                    let input = *input;
                    if self.nodes[input.0].requires_grad {
                        let gi = kernels::weighted_sum_backward(weights, upstream.item());
                        Self::accumulate(&mut grads, input, gi);
                    }
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient for a leaf, or zeros when it was unreachable from the root.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor<S> {
        match self.grad(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.value(id).shape()),
        }
    }
}

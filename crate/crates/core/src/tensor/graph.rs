//! A small tape for reverse-mode differentiation over the kernel ops.
//!
//! Nodes own their forward values; `backward` walks the tape in reverse,
//! dispatching each op's backward kernel and accumulating parent gradients.

use super::kernels::{self, BnSaved, CosSaved};
use super::{Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<S: Scalar> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    DepthwiseConv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    BnTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved<S>,
    },
    BnEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<S>,
        var: Vec<S>,
        eps: f64,
    },
    Relu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ChannelBias {
        x: Var,
        b: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    CosineRows {
        a: Var,
        b: Var,
        saved: CosSaved<S>,
    },
    SumAll {
        x: Var,
    },
    BceCompressLoss {
        y_hat: Var,
        labels: Tensor<S>,
    },
    EmbedRows {
        table: Var,
        rows: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    grad: Option<Tensor<S>>,
    op: Op<S>,
}

/// Statistics a train-mode batch norm computed from its batch; the caller
/// decides how to fold them into running stats.
pub struct BnBatchStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

#[derive(Default)]
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Graph<S> {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of a leaf, zeros when the loss does not depend on it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<S> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let y = kernels::conv2d(self.value(x), self.value(w), stride, pad)?;
        Ok(self.push(y, Op::Conv2d { x, w, stride, pad }))
    }

    pub fn depthwise_conv2d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let y = kernels::depthwise_conv2d(self.value(x), self.value(w), stride, pad)?;
        Ok(self.push(y, Op::DepthwiseConv2d { x, w, stride, pad }))
    }

    /// Depthwise separable conv: depthwise ("same" padding) then pointwise.
    pub fn dw_separable_conv2d(
        &mut self,
        x: Var,
        depth: Var,
        point: Var,
        stride: usize,
    ) -> Result<Var, TensorError> {
        let pad = match self.value(depth).shape() {
            [_, kh, _] => kh / 2,
            _ => 0,
        };
        let mid = self.depthwise_conv2d(x, depth, stride, pad)?;
        self.conv2d(mid, point, 1, 0)
    }

    /// Train-mode batch norm; returns the batch statistics alongside.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BnBatchStats<S>), TensorError> {
        let (y, saved) =
            kernels::batch_norm_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let stats = BnBatchStats {
            mean: saved.mean.clone(),
            var: saved.var.clone(),
        };
        let var = self.push(
            y,
            Op::BnTrain {
                x,
                gamma,
                beta,
                saved,
            },
        );
        Ok((var, stats))
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<S>,
        var: Vec<S>,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let y = kernels::batch_norm_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            &mean,
            &var,
            eps,
        )?;
        Ok(self.push(
            y,
            Op::BnEval {
                x,
                gamma,
                beta,
                mean,
                var,
                eps,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = kernels::relu(self.value(x));
        self.push(y, Op::Relu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let y = kernels::mul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Mul { a, b }))
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let y = kernels::add_channel_bias(self.value(x), self.value(b))?;
        Ok(self.push(y, Op::ChannelBias { x, b }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let y = kernels::global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::GlobalAvgPool { x }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let y = kernels::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (y, saved) = kernels::cosine_rows(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::CosineRows { a, b, saved }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let y = kernels::sum_all(self.value(x));
        self.push(y, Op::SumAll { x })
    }

    pub fn bce_compress_loss(&mut self, y_hat: Var, labels: Tensor<S>) -> Result<Var, TensorError> {
        let y = kernels::bce_compress_loss(self.value(y_hat), &labels)?;
        Ok(self.push(y, Op::BceCompressLoss { y_hat, labels }))
    }

    pub fn embed_rows(&mut self, table: Var, rows: Vec<usize>) -> Result<Var, TensorError> {
        let y = kernels::embed_rows(self.value(table), &rows)?;
        Ok(self.push(y, Op::EmbedRows { table, rows }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    /// Reverse-mode accumulation from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::InvalidInput(
                "backward requires a scalar loss".into(),
            ));
        }
        self.nodes[loss.0].grad = Some(Tensor::full(self.nodes[loss.0].value.shape(), S::one()));

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let Some(grad) = node.grad.as_ref() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, w, stride, pad } => {
                    let (gx, gw) = kernels::conv2d_backward(
                        &before[x.0].value,
                        &before[w.0].value,
                        *stride,
                        *pad,
                        grad,
                    )?;
                    accumulate(&mut before[x.0], gx);
                    accumulate(&mut before[w.0], gw);
                }
                Op::DepthwiseConv2d { x, w, stride, pad } => {
                    let (gx, gw) = kernels::depthwise_conv2d_backward(
                        &before[x.0].value,
                        &before[w.0].value,
                        *stride,
                        *pad,
                        grad,
                    )?;
                    accumulate(&mut before[x.0], gx);
                    accumulate(&mut before[w.0], gw);
                }
                Op::BnTrain {
                    x,
                    gamma,
                    beta,
                    saved,
                } => {
                    let (gx, gg, gb) =
                        kernels::batch_norm_train_backward(saved, &before[gamma.0].value, grad)?;
                    accumulate(&mut before[x.0], gx);
                    accumulate(&mut before[gamma.0], gg);
                    accumulate(&mut before[beta.0], gb);
                }
                Op::BnEval {
                    x,
                    gamma,
                    beta,
                    mean,
                    var,
                    eps,
                } => {
                    let (gx, gg, gb) = kernels::batch_norm_eval_backward(
                        &before[x.0].value,
                        &before[gamma.0].value,
                        mean,
                        var,
                        *eps,
                        grad,
                    )?;
                    accumulate(&mut before[x.0], gx);
                    accumulate(&mut before[gamma.0], gg);
                    accumulate(&mut before[beta.0], gb);
                }
                Op::Relu { x } => {
                    let gx = kernels::relu_backward(&before[x.0].value, grad);
                    accumulate(&mut before[x.0], gx);
                }
                Op::Add { a, b } => {
                    let (ga, gb) = (grad.clone(), grad.clone());
                    accumulate(&mut before[a.0], ga);
                    accumulate(&mut before[b.0], gb);
                }
                Op::Mul { a, b } => {
                    let ga = kernels::mul(grad, &before[b.0].value)?;
                    let gb = kernels::mul(grad, &before[a.0].value)?;
                    accumulate(&mut before[a.0], ga);
                    accumulate(&mut before[b.0], gb);
                }
                Op::ChannelBias { x, b } => {
                    let (gx, gb) =
                        kernels::add_channel_bias_backward(before[x.0].value.shape(), grad)?;
                    accumulate(&mut before[x.0], gx);
                    accumulate(&mut before[b.0], gb);
                }
                Op::GlobalAvgPool { x } => {
                    let gx = kernels::global_avg_pool_backward(before[x.0].value.shape(), grad)?;
                    accumulate(&mut before[x.0], gx);
                }
                Op::Linear { x, w, b } => {
                    let (gx, gw, gb) =
                        kernels::linear_backward(&before[x.0].value, &before[w.0].value, grad)?;
                    accumulate(&mut before[x.0], gx);
                    accumulate(&mut before[w.0], gw);
                    accumulate(&mut before[b.0], gb);
                }
                Op::CosineRows { a, b, saved } => {
                    let (ga, gb) = kernels::cosine_rows_backward(
                        &before[a.0].value,
                        &before[b.0].value,
                        saved,
                        grad,
                    );
                    accumulate(&mut before[a.0], ga);
                    accumulate(&mut before[b.0], gb);
                }
                Op::SumAll { x } => {
                    let gx = Tensor::full(before[x.0].value.shape(), grad.item());
                    accumulate(&mut before[x.0], gx);
                }
                Op::BceCompressLoss { y_hat, labels } => {
                    let g = kernels::bce_compress_loss_backward(
                        &before[y_hat.0].value,
                        labels,
                        grad.item(),
                    );
                    accumulate(&mut before[y_hat.0], g);
                }
                Op::EmbedRows { table, rows } => {
                    let gt =
                        kernels::embed_rows_backward(before[table.0].value.shape(), rows, grad);
                    accumulate(&mut before[table.0], gt);
                }
                Op::Reshape { x } => {
                    let gx = grad.reshape(before[x.0].value.shape())?;
                    accumulate(&mut before[x.0], gx);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(node: &mut Node<S>, delta: Tensor<S>) {
    match &mut node.grad {
        Some(g) => {
            for (gi, di) in g.data_mut().iter_mut().zip(delta.data()) {
                *gi += *di;
            }
        }
        None => node.grad = Some(delta),
    }
}

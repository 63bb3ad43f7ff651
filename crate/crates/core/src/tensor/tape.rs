use super::ops::{self, BatchNormForward};
use super::Tensor;
use crate::error::{ensure, Result};
use crate::exec::Exec;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Batch statistics produced by a training-mode batchnorm node.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    /// Number of values per channel.
    pub count: usize,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    WeightedSum(Vec<(usize, f64)>),
    Relu(usize),
    Conv2d {
        x: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: usize,
        gamma: usize,
        beta: usize,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
    },
    AvgPool2(usize),
    Gap(usize),
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Softmax(usize),
    WeightedNll {
        p: usize,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed in evaluation order, so every node's inputs precede it and
/// a single reverse sweep visits each node once.
pub struct Tape {
    nodes: Vec<Node>,
    exec: Exec,
}

pub const BN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new(exec: Exec) -> Self {
        Tape {
            nodes: Vec::new(),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last [`Tape::backward`], if `v` required one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        ensure!(
            x.shape() == y.shape(),
            Dimension,
            "add: shapes {:?} and {:?} differ",
            x.shape(),
            y.shape()
        );
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, Op::Add(a.0, b.0), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        ensure!(
            x.shape() == y.shape(),
            Dimension,
            "mul: shapes {:?} and {:?} differ",
            x.shape(),
            y.shape()
        );
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect());
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Scale(a.0, c), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a.0]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    /// `Σ coef_i · term_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        ensure!(!terms.is_empty(), Contract, "weighted_sum of zero terms");
        let mut s = 0.0;
        for &(v, c) in terms {
            s += c * self.value(v).item()?;
        }
        let ids: Vec<usize> = terms.iter().map(|(v, _)| v.0).collect();
        let rg = self.rg(&ids);
        let op = Op::WeightedSum(terms.iter().map(|&(v, c)| (v.0, c)).collect());
        Ok(self.push(Tensor::scalar(s), op, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = ops::relu(self.value(a));
        let rg = self.rg(&[a.0]);
        self.push(out, Op::Relu(a.0), rg)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(x), self.value(k), stride, pad, self.exec)?;
        let rg = self.rg(&[x.0, k.0]);
        Ok(self.push(
            out,
            Op::Conv2d {
                x: x.0,
                k: k.0,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Training-mode batchnorm; also returns the batch statistics so the
    /// caller can update running estimates.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let BatchNormForward {
            output,
            xhat,
            inv_std,
            mean,
            var,
        } = ops::batchnorm_train(self.value(x), self.value(gamma), self.value(beta), BN_EPS)?;
        let shape = self.value(x).shape();
        let count = shape[0] * shape[2] * shape[3];
        let rg = self.rg(&[x.0, gamma.0, beta.0]);
        let v = self.push(
            output,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
            rg,
        );
        Ok((v, BatchStats { mean, var, count }))
    }

    /// Inference-mode batchnorm using fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
    ) -> Result<Var> {
        let out = ops::batchnorm_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            mean,
            var,
            BN_EPS,
        )?;
        let inv_std = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let rg = self.rg(&[x.0, gamma.0, beta.0]);
        Ok(self.push(
            out,
            Op::BatchNormEval {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                inv_std,
                mean: mean.to_vec(),
            },
            rg,
        ))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = ops::avg_pool2(self.value(x))?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, Op::AvgPool2(x.0), rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(x))?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, Op::Gap(x.0), rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::linear(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(&[x.0, w.0, b.0]);
        Ok(self.push(
            out,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            rg,
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax(self.value(x))?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, Op::Softmax(x.0), rg))
    }

    /// Sample-weighted negative log-likelihood of probability rows; see [`ops::weighted_nll`].
    pub fn weighted_nll(&mut self, p: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let loss = ops::weighted_nll(self.value(p), targets, weights)?;
        let rg = self.rg(&[p.0]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedNll {
                p: p.0,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`, storing `dloss/dnode` in the
    /// `grad` field of every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        ensure!(
            self.value(loss).is_scalar(),
            Contract,
            "backward needs a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        ensure!(
            self.nodes[loss.0].requires_grad,
            Contract,
            "loss does not depend on any tracked tensor"
        );
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            for (input, dg) in self.node_backward(id, &g)? {
                if !self.nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(dg),
                }
            }
            self.nodes[id].value.set_grad(g)?;
        }
        Ok(())
    }

    fn node_backward(&self, id: usize, g: &[f64]) -> Result<Vec<(usize, Vec<f64>)>> {
        let node = &self.nodes[id];
        let val = |i: usize| &self.nodes[i].value;
        let need = |i: usize| self.nodes[i].requires_grad;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul(a, b) => {
                let da = g.iter().zip(val(*b).data()).map(|(p, q)| p * q).collect();
                let db = g.iter().zip(val(*a).data()).map(|(p, q)| p * q).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).numel()])],
            Op::WeightedSum(terms) => terms.iter().map(|&(i, c)| (i, vec![c * g[0]])).collect(),
            Op::Relu(a) => {
                let d = g
                    .iter()
                    .zip(val(*a).data())
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                vec![(*a, d)]
            }
            Op::Conv2d { x, k, stride, pad } => {
                let (dx, dk) = ops::conv2d_backward(
                    val(*x),
                    val(*k),
                    g,
                    *stride,
                    *pad,
                    need(*x),
                    self.exec,
                )?;
                let mut out = vec![(*k, dk)];
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (dx, dg, db) = ops::batchnorm_train_backward(
                    g,
                    xhat,
                    inv_std,
                    val(*gamma).data(),
                    val(*x).shape(),
                );
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                inv_std,
                mean,
            } => {
                let shape = val(*x).shape();
                let c = shape[1];
                let hw = shape[2] * shape[3];
                let gm = val(*gamma).data();
                let mut dx = vec![0.0; g.len()];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for (idx, ((gp, xp), dp)) in g
                    .chunks(hw)
                    .zip(val(*x).data().chunks(hw))
                    .zip(dx.chunks_mut(hw))
                    .enumerate()
                {
                    let ch = idx % c;
                    for j in 0..hw {
                        dp[j] = gp[j] * gm[ch] * inv_std[ch];
                        dg[ch] += gp[j] * (xp[j] - mean[ch]) * inv_std[ch];
                        db[ch] += gp[j];
                    }
                }
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::AvgPool2(a) => vec![(*a, ops::avg_pool2_backward(g, val(*a).shape()))],
            Op::Gap(a) => {
                let shape = val(*a).shape();
                let hw = shape[2] * shape[3];
                let mut d = Vec::with_capacity(val(*a).numel());
                for &gv in g {
                    d.extend(std::iter::repeat_n(gv / hw as f64, hw));
                }
                vec![(*a, d)]
            }
            Op::Linear { x, w, b } => {
                let (n, i) = val(*x).dims2()?;
                let o = val(*b).numel();
                let mut dx = vec![0.0; n * i];
                ops::gemm(n, o, i, g, false, val(*w).data(), false, &mut dx, 1.0, 0.0);
                let mut dw = vec![0.0; o * i];
                ops::gemm(o, n, i, g, true, val(*x).data(), false, &mut dw, 1.0, 0.0);
                let mut db = vec![0.0; o];
                for row in g.chunks(o) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Softmax(a) => {
                let c = node.value.shape()[1];
                vec![(*a, ops::softmax_backward(node.value.data(), g, c))]
            }
            Op::WeightedNll {
                p,
                targets,
                weights,
            } => {
                let c = val(*p).shape()[1];
                vec![(
                    *p,
                    ops::weighted_nll_backward(val(*p).data(), c, targets, weights, g[0]),
                )]
            }
        })
    }
}

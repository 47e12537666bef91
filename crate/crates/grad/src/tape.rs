//! Reverse-mode autodiff tape.
//!
//! Nodes are appended in topological order, so the backward pass is a single
//! reverse sweep. Ops are a closed enum with hand-derived adjoints; each one
//! is covered by a finite-difference test.

use crate::tensor::{matmul, matmul_nt, Tensor};
use half::f16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Silu(usize),
    Exp(usize),
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    Transpose2d(usize),
    Conv2d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
    },
    AvgPool2(usize),
    Upsample2(usize),
    GroupNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        groups: usize,
        eps: f64,
    },
    SoftmaxRows(usize),
    Reshape(usize),
    ConcatCh(usize, usize),
    MeanAll(usize),
    MseLoss(usize, usize),
    /// Gram matrix F.F^T / (C*H*W) of a [c,h,w] map; see [`Tape::gram`].
    Gram(usize),
    /// [c,h,w] + bias[c]
    AddChanBias {
        input: usize,
        bias: usize,
    },
    /// [n,m] + vec[m] per row
    AddRowVec {
        input: usize,
        vec: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients keyed by the Var they belong to.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }

    /// Assembles a gradient table from externally reduced per-parameter
    /// gradients (e.g. averaged over a parallel batch), aligned with `vars`.
    pub fn from_parts(vars: &[Var], grads: Vec<Option<Tensor>>, n_nodes: usize) -> Self {
        assert_eq!(vars.len(), grads.len());
        let mut table: Vec<Option<Tensor>> = vec![None; n_nodes];
        for (v, g) in vars.iter().zip(grads) {
            table[v.0] = g;
        }
        Grads { grads: table }
    }
}

fn round_f16(x: f64) -> f64 {
    f16::from_f64(x).to_f64()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape());
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        self.push(out, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape());
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data);
        self.push(out, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_assign(s);
        self.push(out, Op::Scale(a.0, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|v| v.tanh()).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data);
        self.push(out, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data);
        self.push(out, Op::Sigmoid(a.0))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|v| v / (1.0 + (-v).exp()))
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data);
        self.push(out, Op::Silu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|v| v.exp()).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data);
        self.push(out, Op::Exp(a.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a.0, b.0))
    }

    /// a [m,k] x b[n,k]^T
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = matmul_nt(self.value(a), self.value(b));
        self.push(out, Op::MatMulNT(a.0, b.0))
    }

    pub fn transpose2d(&mut self, a: Var) -> Var {
        let out = self.value(a).transposed();
        self.push(out, Op::Transpose2d(a.0))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = conv2d_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)), stride, pad);
        self.push(
            out,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|b| b.0),
                stride,
                pad,
            },
        )
    }

    pub fn avg_pool2(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (c, h, w) = chw(x);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(vec![c, oh, ow]);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            acc += x.data()[ch * h * w + (oy * 2 + dy) * w + ox * 2 + dx];
                        }
                    }
                    out.data_mut()[ch * oh * ow + oy * ow + ox] = acc * 0.25;
                }
            }
        }
        self.push(out, Op::AvgPool2(a.0))
    }

    pub fn upsample2(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (c, h, w) = chw(x);
        let (oh, ow) = (h * 2, w * 2);
        let mut out = Tensor::zeros(vec![c, oh, ow]);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out.data_mut()[ch * oh * ow + oy * ow + ox] =
                        x.data()[ch * h * w + (oy / 2) * w + ox / 2];
                }
            }
        }
        self.push(out, Op::Upsample2(a.0))
    }

    pub fn group_norm(&mut self, input: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Var {
        let x = self.value(input);
        let (c, h, w) = chw(x);
        assert_eq!(c % groups, 0, "channels {c} not divisible by groups {groups}");
        assert_eq!(self.value(gamma).len(), c);
        assert_eq!(self.value(beta).len(), c);
        let gamma_v = self.value(gamma).data().to_vec();
        let beta_v = self.value(beta).data().to_vec();
        let group_ch = c / groups;
        let n = group_ch * h * w;
        let mut out = Tensor::zeros(vec![c, h, w]);
        for g in 0..groups {
            let lo = g * group_ch * h * w;
            let hi = lo + n;
            let slice = &x.data()[lo..hi];
            let mean = slice.iter().sum::<f64>() / n as f64;
            let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for (i, &v) in slice.iter().enumerate() {
                let ch = (lo + i) / (h * w);
                out.data_mut()[lo + i] = gamma_v[ch] * (v - mean) * inv_std + beta_v[ch];
            }
        }
        self.push(
            out,
            Op::GroupNorm {
                input: input.0,
                gamma: gamma.0,
                beta: beta.0,
                groups,
                eps,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape().len(), 2);
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let mut out = Tensor::zeros(vec![r, c]);
        for i in 0..r {
            let row = &x.data()[i * c..(i + 1) * c];
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..c {
                out.data_mut()[i * c + j] = exps[j] / z;
            }
        }
        self.push(out, Op::SoftmaxRows(a.0))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let out = self.value(a).reshaped(shape);
        self.push(out, Op::Reshape(a.0))
    }

    pub fn concat_ch(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let (ca, h, w) = chw(av);
        let (cb, h2, w2) = chw(bv);
        assert_eq!((h, w), (h2, w2), "concat_ch spatial mismatch");
        let mut data = Vec::with_capacity((ca + cb) * h * w);
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        self.push(Tensor::new(vec![ca + cb, h, w], data), Op::ConcatCh(a.0, b.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(m), Op::MeanAll(a.0))
    }

    /// Mean squared difference over all elements -> scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape());
        let n = av.len() as f64;
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.push(Tensor::scalar(s / n), Op::MseLoss(a.0, b.0))
    }

    /// Gram matrix of a [c,h,w] feature map: F.F^T / (c*h*w) where F is the
    /// c x (h*w) flattening. With `fp16`, inputs are pre-scaled by `scale`,
    /// rounded to half precision, and products are accumulated with
    /// half-precision rounding before the final rescale; overflow saturates
    /// to infinity exactly as a real fp16 pipeline would.
    pub fn gram(&mut self, a: Var, scale: f64, fp16: bool) -> Var {
        let out = gram_forward(self.value(a), scale, fp16);
        self.push(out, Op::Gram(a.0))
    }

    pub fn add_chan_bias(&mut self, input: Var, bias: Var) -> Var {
        let x = self.value(input);
        let (c, h, w) = chw(x);
        let b = self.value(bias);
        assert_eq!(b.len(), c);
        let mut out = x.clone();
        for ch in 0..c {
            let bv = b.data()[ch];
            for v in &mut out.data_mut()[ch * h * w..(ch + 1) * h * w] {
                *v += bv;
            }
        }
        self.push(
            out,
            Op::AddChanBias {
                input: input.0,
                bias: bias.0,
            },
        )
    }

    pub fn add_row_vec(&mut self, input: Var, vec: Var) -> Var {
        let x = self.value(input);
        assert_eq!(x.shape().len(), 2);
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let v = self.value(vec);
        assert_eq!(v.len(), c);
        let mut out = x.clone();
        for i in 0..r {
            for j in 0..c {
                out.data_mut()[i * c + j] += v.data()[j];
            }
        }
        self.push(
            out,
            Op::AddRowVec {
                input: input.0,
                vec: vec.0,
            },
        )
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&mut self, root: Var) -> Grads {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(
            self.nodes[root.0].value.shape().to_vec(),
            1.0,
        ));

        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].clone() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, grad.clone());
                    accumulate(&mut grads, b, grad);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, grad.clone());
                    let mut neg = grad;
                    neg.scale_assign(-1.0);
                    accumulate(&mut grads, b, neg);
                }
                Op::Mul(a, b) => {
                    let mut ga = grad.clone();
                    for (g, v) in ga.data_mut().iter_mut().zip(self.nodes[b].value.data()) {
                        *g *= v;
                    }
                    let mut gb = grad;
                    for (g, v) in gb.data_mut().iter_mut().zip(self.nodes[a].value.data()) {
                        *g *= v;
                    }
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Scale(a, s) => {
                    let mut ga = grad;
                    ga.scale_assign(s);
                    accumulate(&mut grads, a, ga);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let mut ga = grad;
                    for (g, &yv) in ga.data_mut().iter_mut().zip(y.data()) {
                        *g *= 1.0 - yv * yv;
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    let mut ga = grad;
                    for (g, &yv) in ga.data_mut().iter_mut().zip(y.data()) {
                        *g *= yv * (1.0 - yv);
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Silu(a) => {
                    let x = &self.nodes[a].value;
                    let mut ga = grad;
                    for (g, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        let s = 1.0 / (1.0 + (-xv).exp());
                        *g *= s * (1.0 + xv * (1.0 - s));
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[idx].value;
                    let mut ga = grad;
                    for (g, &yv) in ga.data_mut().iter_mut().zip(y.data()) {
                        *g *= yv;
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::MatMul(a, b) => {
                    // y = a.b : ga = g.b^T ; gb = a^T.g
                    let ga = matmul_nt(&grad, &self.nodes[b].value);
                    let gb = matmul(&self.nodes[a].value.transposed(), &grad);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::MatMulNT(a, b) => {
                    // y = a.b^T : ga = g.b ; gb = g^T.a
                    let ga = matmul(&grad, &self.nodes[b].value);
                    let gb = matmul(&grad.transposed(), &self.nodes[a].value);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Transpose2d(a) => {
                    accumulate(&mut grads, a, grad.transposed());
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let (gi, gw, gb) = conv2d_backward(
                        &self.nodes[input].value,
                        &self.nodes[weight].value,
                        &grad,
                        stride,
                        pad,
                        bias.is_some(),
                    );
                    accumulate(&mut grads, input, gi);
                    accumulate(&mut grads, weight, gw);
                    if let (Some(bid), Some(gb)) = (bias, gb) {
                        accumulate(&mut grads, bid, gb);
                    }
                }
                Op::AvgPool2(a) => {
                    let x = &self.nodes[a].value;
                    let (c, h, w) = chw(x);
                    let (oh, ow) = (h / 2, w / 2);
                    let mut ga = Tensor::zeros(vec![c, h, w]);
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = grad.data()[ch * oh * ow + oy * ow + ox] * 0.25;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        ga.data_mut()
                                            [ch * h * w + (oy * 2 + dy) * w + ox * 2 + dx] += g;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Upsample2(a) => {
                    let x = &self.nodes[a].value;
                    let (c, h, w) = chw(x);
                    let (oh, ow) = (h * 2, w * 2);
                    let mut ga = Tensor::zeros(vec![c, h, w]);
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                ga.data_mut()[ch * h * w + (oy / 2) * w + ox / 2] +=
                                    grad.data()[ch * oh * ow + oy * ow + ox];
                            }
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::GroupNorm {
                    input,
                    gamma,
                    beta,
                    groups,
                    eps,
                } => {
                    let x = &self.nodes[input].value;
                    let (c, h, w) = chw(x);
                    let group_ch = c / groups;
                    let n = group_ch * h * w;
                    let gamma_v = self.nodes[gamma].value.data().to_vec();
                    let mut gx = Tensor::zeros(vec![c, h, w]);
                    let mut ggamma = Tensor::zeros(vec![c]);
                    let mut gbeta = Tensor::zeros(vec![c]);
                    for g in 0..groups {
                        let lo = g * n;
                        let slice = &x.data()[lo..lo + n];
                        let mean = slice.iter().sum::<f64>() / n as f64;
                        let var =
                            slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();

                        // dxhat, plus accumulators for the mean/var terms
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        let mut dxhat = vec![0.0; n];
                        for i in 0..n {
                            let ch = (lo + i) / (h * w);
                            let xhat = (slice[i] - mean) * inv_std;
                            let go = grad.data()[lo + i];
                            ggamma.data_mut()[ch] += go * xhat;
                            gbeta.data_mut()[ch] += go;
                            let d = go * gamma_v[ch];
                            dxhat[i] = d;
                            sum_dxhat += d;
                            sum_dxhat_xhat += d * xhat;
                        }
                        for i in 0..n {
                            let xhat = (slice[i] - mean) * inv_std;
                            gx.data_mut()[lo + i] = inv_std / n as f64
                                * (n as f64 * dxhat[i] - sum_dxhat - xhat * sum_dxhat_xhat);
                        }
                    }
                    accumulate(&mut grads, input, gx);
                    accumulate(&mut grads, gamma, ggamma);
                    accumulate(&mut grads, beta, gbeta);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let (r, c) = (y.shape()[0], y.shape()[1]);
                    let mut ga = Tensor::zeros(vec![r, c]);
                    for i in 0..r {
                        let yrow = &y.data()[i * c..(i + 1) * c];
                        let grow = &grad.data()[i * c..(i + 1) * c];
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for j in 0..c {
                            ga.data_mut()[i * c + j] = yrow[j] * (grow[j] - dot);
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Reshape(a) => {
                    let shape = self.nodes[a].value.shape().to_vec();
                    accumulate(&mut grads, a, grad.reshaped(shape));
                }
                Op::ConcatCh(a, b) => {
                    let na = self.nodes[a].value.len();
                    let shape_a = self.nodes[a].value.shape().to_vec();
                    let shape_b = self.nodes[b].value.shape().to_vec();
                    let ga = Tensor::new(shape_a, grad.data()[..na].to_vec());
                    let gb = Tensor::new(shape_b, grad.data()[na..].to_vec());
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::MeanAll(a) => {
                    let x = &self.nodes[a].value;
                    let g = grad.item() / x.len() as f64;
                    accumulate(&mut grads, a, Tensor::full(x.shape().to_vec(), g));
                }
                Op::MseLoss(a, b) => {
                    let av = &self.nodes[a].value;
                    let bv = &self.nodes[b].value;
                    let n = av.len() as f64;
                    let g = grad.item() * 2.0 / n;
                    let ga = Tensor::new(
                        av.shape().to_vec(),
                        av.data()
                            .iter()
                            .zip(bv.data())
                            .map(|(x, y)| g * (x - y))
                            .collect(),
                    );
                    let mut gb = ga.clone();
                    gb.scale_assign(-1.0);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Gram(input) => {
                    // Straight-through the precision simulation: adjoint of
                    // G = F.F^T / M is dF = (dG + dG^T).F / M.
                    let x = &self.nodes[input].value;
                    let (c, h, w) = chw(x);
                    let m = (c * h * w) as f64;
                    let flat = x.reshaped(vec![c, h * w]);
                    let mut sym = grad.clone();
                    let gt = grad.transposed();
                    sym.add_assign(&gt);
                    let mut gf = matmul(&sym, &flat);
                    gf.scale_assign(1.0 / m);
                    accumulate(&mut grads, input, gf.reshaped(vec![c, h, w]));
                }
                Op::AddChanBias { input, bias } => {
                    let (c, h, w) = chw(&self.nodes[input].value);
                    let mut gb = Tensor::zeros(vec![c]);
                    for ch in 0..c {
                        gb.data_mut()[ch] =
                            grad.data()[ch * h * w..(ch + 1) * h * w].iter().sum();
                    }
                    accumulate(&mut grads, input, grad);
                    accumulate(&mut grads, bias, gb);
                }
                Op::AddRowVec { input, vec } => {
                    let (r, c) = {
                        let s = self.nodes[input].value.shape();
                        (s[0], s[1])
                    };
                    let mut gv = Tensor::zeros(vec![c]);
                    for i in 0..r {
                        for j in 0..c {
                            gv.data_mut()[j] += grad.data()[i * c + j];
                        }
                    }
                    accumulate(&mut grads, input, grad);
                    accumulate(&mut grads, vec, gv);
                }
            }
        }
        Grads { grads }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn chw(t: &Tensor) -> (usize, usize, usize) {
    assert_eq!(t.shape().len(), 3, "expected [c,h,w], got {:?}", t.shape());
    (t.shape()[0], t.shape()[1], t.shape()[2])
}

fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (cin, h, w) = chw(input);
    assert_eq!(weight.shape().len(), 4);
    let (cout, wcin, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    assert_eq!(cin, wcin, "conv2d channel mismatch");
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(vec![cout, oh, ow]);
    let x = input.data();
    let wd = weight.data();
    let od = out.data_mut();
    for oc in 0..cout {
        let base_o = oc * oh * ow;
        if let Some(b) = bias {
            let bv = b.data()[oc];
            for v in &mut od[base_o..base_o + oh * ow] {
                *v = bv;
            }
        }
        for ic in 0..cin {
            let base_x = ic * h * w;
            let base_w = (oc * cin + ic) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wd[base_w + ky * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row_x = base_x + iy as usize * w;
                        let row_o = base_o + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            od[row_o + ox] += wv * x[row_x + ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    with_bias: bool,
) -> (Tensor, Tensor, Option<Tensor>) {
    let (cin, h, w) = chw(input);
    let (cout, _, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut gi = Tensor::zeros(vec![cin, h, w]);
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    let mut gb = if with_bias {
        Some(Tensor::zeros(vec![cout]))
    } else {
        None
    };
    let x = input.data();
    let wd = weight.data();
    let g = grad_out.data();
    for oc in 0..cout {
        let base_o = oc * oh * ow;
        if let Some(gb) = gb.as_mut() {
            gb.data_mut()[oc] = g[base_o..base_o + oh * ow].iter().sum();
        }
        for ic in 0..cin {
            let base_x = ic * h * w;
            let base_w = (oc * cin + ic) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wd[base_w + ky * kw + kx];
                    let mut wacc = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row_x = base_x + iy as usize * w;
                        let row_o = base_o + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let gv = g[row_o + ox];
                            wacc += gv * x[row_x + ix as usize];
                            gi.data_mut()[row_x + ix as usize] += gv * wv;
                        }
                    }
                    gw.data_mut()[base_w + ky * kw + kx] += wacc;
                }
            }
        }
    }
    (gi, gw, gb)
}

fn gram_forward(input: &Tensor, scale: f64, fp16: bool) -> Tensor {
    let (c, h, w) = chw(input);
    let hw = h * w;
    let m = (c * hw) as f64;
    let x = input.data();
    let mut out = Tensor::zeros(vec![c, c]);
    if fp16 {
        // Model a half-precision GEMM with wide accumulation: inputs are
        // rounded to f16, products accumulate exactly, and the resulting
        // inner product is stored back through f16 - which is where an
        // unscaled computation overflows to infinity.
        let scaled: Vec<f64> = x.iter().map(|&v| round_f16(v * scale)).collect();
        for i in 0..c {
            for j in i..c {
                let mut acc = 0.0f64;
                for k in 0..hw {
                    acc += scaled[i * hw + k] * scaled[j * hw + k];
                }
                let v = round_f16(acc) / (scale * scale * m);
                out.data_mut()[i * c + j] = v;
                out.data_mut()[j * c + i] = v;
            }
        }
    } else {
        for i in 0..c {
            for j in i..c {
                let mut acc = 0.0;
                for k in 0..hw {
                    acc += x[i * hw + k] * x[j * hw + k];
                }
                let v = acc / m;
                out.data_mut()[i * c + j] = v;
                out.data_mut()[j * c + i] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_and_scale_values() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::new(vec![2], vec![3.0, 4.0]));
        let s = tape.add(a, b);
        let y = tape.scale(s, 2.0);
        assert_eq!(tape.value(y).data(), &[8.0, 12.0]);
    }

    #[test]
    fn backward_through_mse() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2], vec![1.0, 3.0]));
        let b = tape.leaf(Tensor::new(vec![2], vec![0.0, 0.0]));
        let loss = tape.mse(a, b);
        assert_eq!(tape.value(loss).item(), 5.0);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 3.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[-1.0, -3.0]);
    }

    #[test]
    fn gram_identity_between_modes_for_small_values() {
        // Values exactly representable in f16 give identical gram matrices.
        let mut tape = Tape::new();
        let f = tape.leaf(Tensor::new(vec![1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]));
        let full = tape.gram(f, 1.0, false);
        let half = tape.gram(f, 1.0, true);
        assert_eq!(tape.value(full).data(), &[1.0]);
        assert_eq!(tape.value(half).data(), &[1.0]);
    }

    #[test]
    fn gram_fp16_overflows_without_scaling() {
        // |f| = 50 over 4096 positions: inner product 50^2*4096 >> 65504.
        let mut tape = Tape::new();
        let f = tape.leaf(Tensor::full(vec![1, 64, 64], 50.0));
        let unscaled = tape.gram(f, 1.0, true);
        assert!(!tape.value(unscaled).all_finite());
        let scale = 1.0 / (4096f64).sqrt();
        let scaled = tape.gram(f, scale, true);
        assert!(tape.value(scaled).all_finite());
        // Exact-arithmetic value is 50^2 * 4096 / 4096 = 2500.
        assert!((tape.value(scaled).data()[0] - 2500.0).abs() / 2500.0 < 2e-3);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.1, 5.0, -2.0, 100.0, 100.0, 100.0]));
        let y = tape.softmax_rows(x);
        for i in 0..2 {
            let s: f64 = tape.value(y).data()[i * 3..(i + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // All-equal logits -> uniform row.
        assert!((tape.value(y).data()[3] - 1.0 / 3.0).abs() < 1e-12);
    }
}

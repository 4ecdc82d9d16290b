//! Reverse-mode autodiff tape over [`Tensor`] values.
//!
//! A [`Graph`] is built per forward pass. Network parameters are bound by
//! name with [`Graph::bind`]; binding the same name twice returns the same
//! node so gradients from several uses accumulate in one place (the
//! discriminator sees both the target and the predicted heatmap in a single
//! step, for example). [`Graph::backward`] fills gradients for every node
//! that transitively depends on a trainable leaf, and
//! [`Graph::trainable_grads`] hands them back keyed by parameter name.

use std::collections::BTreeMap;

use super::kernels::{self, ConvCfg};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// How a batch-normalization node computes its statistics.
#[derive(Debug, Clone)]
pub enum BnMode {
    /// Statistics from the current activation (per-channel, over h*w).
    Train,
    /// Fixed statistics (the layer's running estimates).
    Eval { mean: Vec<f64>, var: Vec<f64> },
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        cfg: ConvCfg,
        kdims: (usize, usize),
    },
    ConvT2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        k: usize,
        s: usize,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        // per-channel statistics used in the forward pass
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        trained_stats: bool,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Sigmoid {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    ConcatC {
        a: Var,
        b: Var,
    },
    Gaussian {
        x: Var,
        taps: Vec<f64>,
    },
    MeanAbs {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    LnClamped {
        x: Var,
        eps: f64,
    },
    Detach,
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: BTreeMap<String, (Var, bool)>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Constant input; no gradient is tracked through it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Named parameter leaf. Rebinding an already-bound name returns the
    /// existing node so gradient contributions accumulate.
    pub fn bind(&mut self, name: &str, value: &Tensor, trainable: bool) -> Var {
        if let Some(&(var, t)) = self.bound.get(name) {
            assert_eq!(t, trainable, "parameter {} rebound with different trainability", name);
            return var;
        }
        let var = self.push(value.clone(), trainable, Op::Leaf);
        self.bound.insert(name.to_string(), (var, trainable));
        var
    }

    /// Gradients of all trainable bound parameters that received one.
    pub fn trainable_grads(&mut self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, &(var, trainable)) in &self.bound {
            if trainable {
                if let Some(g) = self.nodes[var.0].grad.as_ref() {
                    out.insert(name.clone(), g.clone());
                }
            }
        }
        out
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: ConvCfg) -> Var {
        let (cin, h, wd) = self.value(x).chw();
        let wshape = self.value(w).shape().to_vec();
        assert_eq!(wshape.len(), 4);
        assert_eq!(
            wshape[1], cin,
            "conv2d weight expects {} input channels, activation has {}",
            wshape[1], cin
        );
        let (cout, kh, kw) = (wshape[0], wshape[2], wshape[3]);
        let (oh, ow) = (cfg.out_dim(h, kh), cfg.out_dim(wd, kw));
        let mut y = Tensor::zeros(&[cout, oh, ow]);
        kernels::conv2d_forward(
            self.value(x).data(),
            (cin, h, wd),
            self.value(w).data(),
            (cout, kh, kw),
            b.map(|b| self.value(b).data()),
            cfg,
            y.data_mut(),
        );
        let needs =
            self.needs(x) || self.needs(w) || b.map_or(false, |b| self.needs(b));
        self.push(
            y,
            needs,
            Op::Conv2d {
                x,
                w,
                b,
                cfg,
                kdims: (kh, kw),
            },
        )
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, k: usize, s: usize) -> Var {
        let (cin, h, wd) = self.value(x).chw();
        let wshape = self.value(w).shape().to_vec();
        assert_eq!(wshape[0], cin);
        let cout = wshape[1];
        let (oh, ow) = ((h - 1) * s + k, (wd - 1) * s + k);
        let mut y = Tensor::zeros(&[cout, oh, ow]);
        kernels::conv_transpose2d_forward(
            self.value(x).data(),
            (cin, h, wd),
            self.value(w).data(),
            cout,
            k,
            s,
            b.map(|b| self.value(b).data()),
            y.data_mut(),
        );
        let needs =
            self.needs(x) || self.needs(w) || b.map_or(false, |b| self.needs(b));
        self.push(y, needs, Op::ConvT2d { x, w, b, k, s })
    }

    pub fn maxpool2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let mut y = Tensor::zeros(&[c, h / 2, w / 2]);
        let mut argmax = vec![0u32; c * (h / 2) * (w / 2)];
        kernels::maxpool2_forward(self.value(x).data(), (c, h, w), y.data_mut(), &mut argmax);
        let needs = self.needs(x);
        self.push(y, needs, Op::MaxPool2 { x, argmax })
    }

    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64, mode: BnMode) -> Var {
        let (c, h, w) = self.value(x).chw();
        let n = (h * w) as f64;
        let (mean, var, trained_stats) = match mode {
            BnMode::Train => {
                let xv = self.value(x).data();
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let plane = &xv[ci * h * w..(ci + 1) * h * w];
                    let m = plane.iter().sum::<f64>() / n;
                    let v = plane.iter().map(|&p| (p - m) * (p - m)).sum::<f64>() / n;
                    mean[ci] = m;
                    var[ci] = v;
                }
                (mean, var, true)
            }
            BnMode::Eval { mean, var } => (mean, var, false),
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut y = Tensor::zeros(&[c, h, w]);
        {
            let yd = y.data_mut();
            for ci in 0..c {
                let (g, b, m, is) = (gv[ci], bv[ci], mean[ci], inv_std[ci]);
                for i in ci * h * w..(ci + 1) * h * w {
                    yd[i] = g * (xv[i] - m) * is + b;
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            y,
            needs,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                eps,
                mean,
                inv_std,
                trained_stats,
            },
        )
    }

    /// Batch statistics a training-mode BN node just used, for running-stat
    /// updates by the owning layer.
    pub fn bn_stats(&self, v: Var) -> (Vec<f64>, Vec<f64>) {
        match &self.nodes[v.0].op {
            Op::BatchNorm { mean, inv_std, eps, trained_stats, .. } => {
                assert!(trained_stats, "bn_stats on an eval-mode node");
                let var: Vec<f64> = inv_std.iter().map(|&is| 1.0 / (is * is) - eps).collect();
                (mean.clone(), var)
            }
            _ => panic!("bn_stats on a non-BatchNorm node"),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(y, needs, Op::Relu { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let y = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let needs = self.needs(x);
        self.push(y, needs, Op::LeakyRelu { x, slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        let needs = self.needs(x);
        self.push(y, needs, Op::Sigmoid { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(y, needs, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let bv = self.value(b).data().to_vec();
        let mut y = self.value(a).clone();
        for (o, s) in y.data_mut().iter_mut().zip(bv.iter()) {
            *o -= s;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(y, needs, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let bv = self.value(b).data().to_vec();
        let mut y = self.value(a).clone();
        for (o, s) in y.data_mut().iter_mut().zip(bv.iter()) {
            *o *= s;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(y, needs, Op::Mul { a, b })
    }

    /// `y = scale * x + offset`, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        let y = self.value(x).map(|v| scale * v + offset);
        let needs = self.needs(x);
        self.push(y, needs, Op::Affine { x, scale })
    }

    pub fn concat_c(&mut self, a: Var, b: Var) -> Var {
        let (ca, h, w) = self.value(a).chw();
        let (cb, hb, wb) = self.value(b).chw();
        assert_eq!((h, w), (hb, wb), "concat_c spatial dims differ");
        let mut data = Vec::with_capacity((ca + cb) * h * w);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let y = Tensor::from_vec(&[ca + cb, h, w], data);
        let needs = self.needs(a) || self.needs(b);
        self.push(y, needs, Op::ConcatC { a, b })
    }

    /// Fixed (non-trainable) separable Gaussian smoothing, reflect padded.
    pub fn gaussian(&mut self, x: Var, taps: &[f64]) -> Var {
        let (c, h, w) = self.value(x).chw();
        let mut y = Tensor::zeros(&[c, h, w]);
        kernels::gaussian_reflect_forward(self.value(x).data(), (c, h, w), taps, y.data_mut());
        let needs = self.needs(x);
        self.push(
            y,
            needs,
            Op::Gaussian {
                x,
                taps: taps.to_vec(),
            },
        )
    }

    /// Scalar mean of absolute values.
    pub fn mean_abs(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let v = self.value(x).data().iter().map(|v| v.abs()).sum::<f64>() / n;
        let needs = self.needs(x);
        self.push(Tensor::scalar(v), needs, Op::MeanAbs { x })
    }

    /// `[c,h,w] -> [c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let n = (h * w) as f64;
        let xv = self.value(x).data();
        let data: Vec<f64> = (0..c)
            .map(|ci| xv[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() / n)
            .collect();
        let needs = self.needs(x);
        self.push(Tensor::from_vec(&[c], data), needs, Op::GlobalAvgPool { x })
    }

    /// Fully-connected layer on a `[in]` vector; `w: [out,in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xin = self.value(x).len();
        let wshape = self.value(w).shape().to_vec();
        assert_eq!(wshape[1], xin);
        let out = wshape[0];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let data: Vec<f64> = (0..out)
            .map(|o| {
                bv[o]
                    + wv[o * xin..(o + 1) * xin]
                        .iter()
                        .zip(xv.iter())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Tensor::from_vec(&[out], data), needs, Op::Dense { x, w, b })
    }

    /// `ln(max(x, eps))`, the epsilon guard for attention losses.
    pub fn ln_clamped(&mut self, x: Var, eps: f64) -> Var {
        let y = self.value(x).map(|v| v.max(eps).ln());
        let needs = self.needs(x);
        self.push(y, needs, Op::LnClamped { x, eps })
    }

    /// Value copy that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let y = self.value(x).clone();
        let _ = x;
        self.push(y, false, Op::Detach)
    }

    fn accumulate(&mut self, v: Var, delta: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match self.nodes[v.0].grad.as_mut() {
            Some(g) => g.add_assign(&delta),
            None => self.nodes[v.0].grad = Some(delta),
        }
    }

    /// Backpropagate from a scalar `loss` node (seeded with gradient 1).
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar node");
        assert!(
            self.nodes[loss.0].needs_grad,
            "backward from a node with no trainable dependencies"
        );
        self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));

        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].needs_grad || self.nodes[id].grad.is_none() {
                continue;
            }
            let dy = self.nodes[id].grad.as_ref().unwrap().clone();
            match &self.nodes[id].op {
                Op::Leaf | Op::Detach => {}
                &Op::Conv2d {
                    x,
                    w,
                    b,
                    cfg,
                    kdims: (kh, kw),
                } => {
                    let (cin, h, wd) = self.value(x).chw();
                    let (cout, oh, ow) = {
                        let s = dy.shape();
                        (s[0], s[1], s[2])
                    };
                    if self.needs(x) {
                        let mut dx = Tensor::zeros(&[cin, h, wd]);
                        kernels::conv2d_backward_input(
                            dy.data(),
                            (cout, oh, ow),
                            self.value(w).data(),
                            (cin, kh, kw),
                            cfg,
                            (h, wd),
                            dx.data_mut(),
                        );
                        self.accumulate(x, dx);
                    }
                    let need_w = self.needs(w);
                    let need_b = b.map_or(false, |b| self.needs(b));
                    if need_w || need_b {
                        let mut dw = Tensor::zeros(self.value(w).shape());
                        let mut db = Tensor::zeros(&[cout]);
                        kernels::conv2d_backward_params(
                            dy.data(),
                            (cout, oh, ow),
                            self.value(x).data(),
                            (cin, h, wd),
                            (kh, kw),
                            cfg,
                            dw.data_mut(),
                            Some(db.data_mut()),
                        );
                        if need_w {
                            self.accumulate(w, dw);
                        }
                        if let (true, Some(b)) = (need_b, b) {
                            self.accumulate(b, db);
                        }
                    }
                }
                &Op::ConvT2d { x, w, b, k, s } => {
                    let (cin, h, wd) = self.value(x).chw();
                    let (cout, oh, ow) = {
                        let sh = dy.shape();
                        (sh[0], sh[1], sh[2])
                    };
                    if self.needs(x) {
                        let mut dx = Tensor::zeros(&[cin, h, wd]);
                        kernels::conv_transpose2d_backward_input(
                            dy.data(),
                            (cout, oh, ow),
                            self.value(w).data(),
                            cin,
                            k,
                            s,
                            (h, wd),
                            dx.data_mut(),
                        );
                        self.accumulate(x, dx);
                    }
                    let need_w = self.needs(w);
                    let need_b = b.map_or(false, |b| self.needs(b));
                    if need_w || need_b {
                        let mut dw = Tensor::zeros(self.value(w).shape());
                        let mut db = Tensor::zeros(&[cout]);
                        kernels::conv_transpose2d_backward_params(
                            dy.data(),
                            (cout, oh, ow),
                            self.value(x).data(),
                            (cin, h, wd),
                            k,
                            s,
                            dw.data_mut(),
                            Some(db.data_mut()),
                        );
                        if need_w {
                            self.accumulate(w, dw);
                        }
                        if let (true, Some(b)) = (need_b, b) {
                            self.accumulate(b, db);
                        }
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    let x = *x;
                    let (c, h, w) = self.value(x).chw();
                    let (_, oh, ow) = (dy.shape()[0], dy.shape()[1], dy.shape()[2]);
                    let mut dx = Tensor::zeros(&[c, h, w]);
                    kernels::maxpool2_backward(
                        dy.data(),
                        (c, oh, ow),
                        argmax,
                        (h, w),
                        dx.data_mut(),
                    );
                    self.accumulate(x, dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    trained_stats,
                    ..
                } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let (mean, inv_std, trained) = (mean.clone(), inv_std.clone(), *trained_stats);
                    let (c, h, w) = self.value(x).chw();
                    let n = (h * w) as f64;
                    let xv = self.value(x).data().to_vec();
                    let gv = self.value(gamma).data().to_vec();
                    let dyv = dy.data();

                    let mut dgamma = Tensor::zeros(&[c]);
                    let mut dbeta = Tensor::zeros(&[c]);
                    let mut dx = Tensor::zeros(&[c, h, w]);
                    for ci in 0..c {
                        let lo = ci * h * w;
                        let hi = lo + h * w;
                        let (m, is) = (mean[ci], inv_std[ci]);
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        for i in lo..hi {
                            let xhat = (xv[i] - m) * is;
                            sum_dy += dyv[i];
                            sum_dy_xhat += dyv[i] * xhat;
                        }
                        dbeta.data_mut()[ci] = sum_dy;
                        dgamma.data_mut()[ci] = sum_dy_xhat;
                        let g = gv[ci];
                        if trained {
                            for i in lo..hi {
                                let xhat = (xv[i] - m) * is;
                                dx.data_mut()[i] = g * is / n
                                    * (n * dyv[i] - sum_dy - xhat * sum_dy_xhat);
                            }
                        } else {
                            for i in lo..hi {
                                dx.data_mut()[i] = g * is * dyv[i];
                            }
                        }
                    }
                    if self.needs(x) {
                        self.accumulate(x, dx);
                    }
                    if self.needs(gamma) {
                        self.accumulate(gamma, dgamma);
                    }
                    if self.needs(beta) {
                        self.accumulate(beta, dbeta);
                    }
                }
                &Op::Relu { x } => {
                    let mask: Vec<f64> = self.value(x).data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
                    let mut dx = dy.clone();
                    for (d, m) in dx.data_mut().iter_mut().zip(mask.iter()) {
                        *d *= m;
                    }
                    self.accumulate(x, dx);
                }
                &Op::LeakyRelu { x, slope } => {
                    let mask: Vec<f64> = self.value(x).data().iter().map(|&v| if v > 0.0 { 1.0 } else { slope }).collect();
                    let mut dx = dy.clone();
                    for (d, m) in dx.data_mut().iter_mut().zip(mask.iter()) {
                        *d *= m;
                    }
                    self.accumulate(x, dx);
                }
                &Op::Sigmoid { x } => {
                    let yv = self.nodes[id].value.data().to_vec();
                    let mut dx = dy.clone();
                    for (d, y) in dx.data_mut().iter_mut().zip(yv.iter()) {
                        *d *= y * (1.0 - y);
                    }
                    self.accumulate(x, dx);
                }
                &Op::Add { a, b } => {
                    self.accumulate(a, dy.clone());
                    self.accumulate(b, dy.clone());
                }
                &Op::Sub { a, b } => {
                    self.accumulate(a, dy.clone());
                    let neg = dy.map(|v| -v);
                    self.accumulate(b, neg);
                }
                &Op::Mul { a, b } => {
                    if self.needs(a) {
                        let mut da = dy.clone();
                        for (d, v) in da.data_mut().iter_mut().zip(self.value(b).data().iter()) {
                            *d *= v;
                        }
                        self.accumulate(a, da);
                    }
                    if self.needs(b) {
                        let mut db = dy.clone();
                        for (d, v) in db.data_mut().iter_mut().zip(self.value(a).data().iter()) {
                            *d *= v;
                        }
                        self.accumulate(b, db);
                    }
                }
                &Op::Affine { x, scale } => {
                    let dx = dy.map(|v| scale * v);
                    self.accumulate(x, dx);
                }
                &Op::ConcatC { a, b } => {
                    let (ca, h, w) = self.value(a).chw();
                    let (cb, _, _) = self.value(b).chw();
                    let da = Tensor::from_vec(&[ca, h, w], dy.data()[..ca * h * w].to_vec());
                    let db = Tensor::from_vec(&[cb, h, w], dy.data()[ca * h * w..].to_vec());
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Gaussian { x, taps } => {
                    let x = *x;
                    let taps = taps.clone();
                    let (c, h, w) = self.value(x).chw();
                    let mut dx = Tensor::zeros(&[c, h, w]);
                    kernels::gaussian_reflect_backward(dy.data(), (c, h, w), &taps, dx.data_mut());
                    self.accumulate(x, dx);
                }
                &Op::MeanAbs { x } => {
                    let n = self.value(x).len() as f64;
                    let g = dy.item() / n;
                    let dx = self.value(x).map(|v| {
                        if v > 0.0 {
                            g
                        } else if v < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                    self.accumulate(x, dx);
                }
                &Op::GlobalAvgPool { x } => {
                    let (c, h, w) = self.value(x).chw();
                    let n = (h * w) as f64;
                    let mut dx = Tensor::zeros(&[c, h, w]);
                    for ci in 0..c {
                        let g = dy.data()[ci] / n;
                        dx.data_mut()[ci * h * w..(ci + 1) * h * w].fill(g);
                    }
                    self.accumulate(x, dx);
                }
                &Op::Dense { x, w, b } => {
                    let xin = self.value(x).len();
                    let out = dy.len();
                    if self.needs(x) {
                        let wv = self.value(w).data();
                        let mut dx = Tensor::zeros(&[xin]);
                        for o in 0..out {
                            let g = dy.data()[o];
                            for i in 0..xin {
                                dx.data_mut()[i] += g * wv[o * xin + i];
                            }
                        }
                        self.accumulate(x, dx);
                    }
                    if self.needs(w) {
                        let xv = self.value(x).data().to_vec();
                        let mut dw = Tensor::zeros(&[out, xin]);
                        for o in 0..out {
                            let g = dy.data()[o];
                            for i in 0..xin {
                                dw.data_mut()[o * xin + i] = g * xv[i];
                            }
                        }
                        self.accumulate(w, dw);
                    }
                    if self.needs(b) {
                        self.accumulate(b, dy.clone());
                    }
                }
                &Op::LnClamped { x, eps } => {
                    let mut dx = dy.clone();
                    for (d, v) in dx.data_mut().iter_mut().zip(self.value(x).data().iter()) {
                        *d = if *v > eps { *d / *v } else { 0.0 };
                    }
                    self.accumulate(x, dx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_name_is_deduplicated_and_grads_accumulate() {
        let mut g = Graph::new();
        let w = Tensor::from_vec(&[1], vec![3.0]);
        let a = g.bind("p", &w, true);
        let b = g.bind("p", &w, true);
        assert_eq!(a, b);
        // loss = mean|p| + mean|p| -> dloss/dp = 2
        let l1 = g.mean_abs(a);
        let l2 = g.mean_abs(b);
        let loss = g.add(l1, l2);
        g.backward(loss);
        let grads = g.trainable_grads();
        assert_eq!(grads["p"].item(), 2.0);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let w = Tensor::from_vec(&[1], vec![2.0]);
        let p = g.bind("p", &w, true);
        let d = g.detach(p);
        let q = g.mul(p, d); // loss = p * const(2)
        let loss = g.mean_abs(q);
        g.backward(loss);
        assert_eq!(g.trainable_grads()["p"].item(), 2.0);
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(&[3], vec![-800.0, 0.0, 800.0]));
        let s = g.sigmoid(x);
        for &v in g.value(s).data() {
            assert!(v >= 0.0 && v <= 1.0);
        }
        assert_eq!(g.value(s).data()[1], 0.5);
    }
}

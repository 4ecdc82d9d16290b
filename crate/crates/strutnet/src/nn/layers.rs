//! Parameter-owning layers and weight initialization.
//!
//! Layers hold their tensors directly; during a forward pass they bind them
//! into the [`Graph`] under a stable dotted path (`"local/stem.conv.w"`).
//! The same paths key checkpoint entries and Adam state.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{BnMode, Graph, Var};
use super::kernels::ConvCfg;
use super::tensor::Tensor;

/// Visitor over named parameter tensors, in a fixed deterministic order.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
}

/// He-normal initialization for a conv kernel `[out, in, kh, kw]`.
pub fn he_conv(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, kh: usize, kw: usize) -> Tensor {
    let std = (2.0 / (in_c * kh * kw) as f64).sqrt();
    let normal = Normal::new(0.0, std).unwrap();
    let data: Vec<f64> = (0..out_c * in_c * kh * kw)
        .map(|_| normal.sample(rng))
        .collect();
    Tensor::from_vec(&[out_c, in_c, kh, kw], data)
}

pub struct Conv2dLayer {
    pub name: String,
    pub w: Tensor,
    pub b: Tensor,
    pub cfg: ConvCfg,
}

impl Conv2dLayer {
    pub fn new(
        name: impl Into<String>,
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        k: usize,
        cfg: ConvCfg,
    ) -> Self {
        Conv2dLayer {
            name: name.into(),
            w: he_conv(rng, out_c, in_c, k, k),
            b: Tensor::zeros(&[out_c]),
            cfg,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let w = g.bind(&format!("{}.w", self.name), &self.w, trainable);
        let b = g.bind(&format!("{}.b", self.name), &self.b, trainable);
        g.conv2d(x, w, Some(b), self.cfg)
    }
}

impl Params for Conv2dLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.w", self.name), &self.w);
        f(&format!("{}.b", self.name), &self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.w", self.name), &mut self.w);
        f(&format!("{}.b", self.name), &mut self.b);
    }
}

/// Transposed convolution used for 2x decoder upsampling; kernel layout
/// `[in, out, k, k]`.
pub struct ConvT2dLayer {
    pub name: String,
    pub w: Tensor,
    pub b: Tensor,
    pub k: usize,
    pub s: usize,
}

impl ConvT2dLayer {
    pub fn new(
        name: impl Into<String>,
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        k: usize,
        s: usize,
    ) -> Self {
        let std = (2.0 / (in_c * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let data: Vec<f64> = (0..in_c * out_c * k * k)
            .map(|_| normal.sample(rng))
            .collect();
        ConvT2dLayer {
            name: name.into(),
            w: Tensor::from_vec(&[in_c, out_c, k, k], data),
            b: Tensor::zeros(&[out_c]),
            k,
            s,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let w = g.bind(&format!("{}.w", self.name), &self.w, trainable);
        let b = g.bind(&format!("{}.b", self.name), &self.b, trainable);
        g.conv_transpose2d(x, w, Some(b), self.k, self.s)
    }
}

impl Params for ConvT2dLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.w", self.name), &self.w);
        f(&format!("{}.b", self.name), &self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.w", self.name), &mut self.w);
        f(&format!("{}.b", self.name), &mut self.b);
    }
}

/// Per-channel normalization with learned affine and running statistics.
///
/// Training mode normalizes by the statistics of the current activation
/// (batch size is 1 throughout, so these are per-sample statistics) and
/// updates the running estimates. Evaluation mode applies the frozen
/// running statistics, which keeps the layer a purely local, fully
/// convolutional affine map — required for patch/full-image equivalence.
pub struct BatchNorm2dLayer {
    pub name: String,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2dLayer {
    pub fn new(name: impl Into<String>, c: usize) -> Self {
        BatchNorm2dLayer {
            name: name.into(),
            gamma: Tensor::full(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::full(&[c], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Forward in eval mode (frozen statistics).
    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let gamma = g.bind(&format!("{}.gamma", self.name), &self.gamma, trainable);
        let beta = g.bind(&format!("{}.beta", self.name), &self.beta, trainable);
        g.batch_norm(
            x,
            gamma,
            beta,
            self.eps,
            BnMode::Eval {
                mean: self.running_mean.data().to_vec(),
                var: self.running_var.data().to_vec(),
            },
        )
    }

    /// Forward in training mode; returns the node so the caller can update
    /// running statistics via [`BatchNorm2dLayer::absorb_batch_stats`].
    pub fn forward_train(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.bind(&format!("{}.gamma", self.name), &self.gamma, true);
        let beta = g.bind(&format!("{}.beta", self.name), &self.beta, true);
        g.batch_norm(x, gamma, beta, self.eps, BnMode::Train)
    }

    pub fn absorb_batch_stats(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, &v) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * v;
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(var) {
            *r = (1.0 - m) * *r + m * v;
        }
    }
}

impl Params for BatchNorm2dLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.gamma", self.name), &self.gamma);
        f(&format!("{}.beta", self.name), &self.beta);
        f(&format!("{}.running_mean", self.name), &self.running_mean);
        f(&format!("{}.running_var", self.name), &self.running_var);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.gamma", self.name), &mut self.gamma);
        f(&format!("{}.beta", self.name), &mut self.beta);
        f(&format!("{}.running_mean", self.name), &mut self.running_mean);
        f(&format!("{}.running_var", self.name), &mut self.running_var);
    }
}

pub struct DenseLayer {
    pub name: String,
    pub w: Tensor,
    pub b: Tensor,
}

impl DenseLayer {
    pub fn new(name: impl Into<String>, rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let data: Vec<f64> = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
        DenseLayer {
            name: name.into(),
            w: Tensor::from_vec(&[out_dim, in_dim], data),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let w = g.bind(&format!("{}.w", self.name), &self.w, trainable);
        let b = g.bind(&format!("{}.b", self.name), &self.b, trainable);
        g.dense(x, w, b)
    }
}

impl Params for DenseLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.w", self.name), &self.w);
        f(&format!("{}.b", self.name), &self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.w", self.name), &mut self.w);
        f(&format!("{}.b", self.name), &mut self.b);
    }
}

/// Small deterministic jitter source for tests that need arbitrary values.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform random tensor in [lo, hi), for tests and probes.
pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data)
}

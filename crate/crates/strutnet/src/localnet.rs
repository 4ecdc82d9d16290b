//! Patch-based fully-convolutional strut detector.
//!
//! Nine zero-padded 3×3 convolutions at stride 1: a stem layer followed by
//! four residual pairs (conv→norm→relu, conv→norm, identity skip, relu),
//! then a linear 1×1 head and a fixed Gaussian smoothing kernel that
//! suppresses single-pixel artifacts. Spatial dimensions are preserved at
//! every layer, so the same weights run on 64×64 training patches and on
//! full images, and the receptive field of an output pixel is exactly
//! `n_layers + ceil(3*sigma)` pixels in radius.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::kernels::{self, ConvCfg};
use crate::nn::layers::{BatchNorm2dLayer, Conv2dLayer, Params};
use crate::nn::Tensor;
use crate::types::{Grid, HeatMap};

/// Architecture of the local network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalNetSpec {
    /// Number of 3×3 convolution layers (the 1×1 head is extra).
    pub n_layers: usize,
    /// Hidden channel width, identical for all layers.
    pub channels: usize,
    /// Sigma of the fixed output smoother, in pixels.
    pub smoother_sigma: f64,
}

impl Default for LocalNetSpec {
    fn default() -> Self {
        LocalNetSpec {
            n_layers: 9,
            channels: 32,
            smoother_sigma: 1.0,
        }
    }
}

impl LocalNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 1 {
            return Err(Error::config("local net needs at least one layer"));
        }
        if self.channels < 1 {
            return Err(Error::config("local net channel width must be positive"));
        }
        if self.smoother_sigma <= 0.0 {
            return Err(Error::config("smoother sigma must be positive"));
        }
        Ok(())
    }

    /// Radius beyond which an input pixel cannot influence an output pixel:
    /// one pixel per 3×3 layer plus the Gaussian truncation radius.
    pub fn receptive_radius(&self) -> usize {
        self.n_layers + (3.0 * self.smoother_sigma).ceil() as usize
    }

    /// Smallest input side length the stack accepts.
    pub fn min_input_dim(&self) -> usize {
        (2 * self.n_layers + 1).max((3.0 * self.smoother_sigma).ceil() as usize + 1)
    }
}

pub struct LocalNet {
    pub spec: LocalNetSpec,
    convs: Vec<Conv2dLayer>,
    norms: Vec<BatchNorm2dLayer>,
    head: Conv2dLayer,
    taps: Vec<f64>,
}

impl LocalNet {
    pub fn new(spec: LocalNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = spec.channels;
        let mut convs = Vec::with_capacity(spec.n_layers);
        let mut norms = Vec::with_capacity(spec.n_layers);
        for i in 0..spec.n_layers {
            let in_c = if i == 0 { 1 } else { c };
            convs.push(Conv2dLayer::new(
                format!("local/conv{}", i),
                &mut rng,
                in_c,
                c,
                3,
                ConvCfg::unit(1),
            ));
            norms.push(BatchNorm2dLayer::new(format!("local/norm{}", i), c));
        }
        let head = Conv2dLayer::new("local/head", &mut rng, c, 1, 1, ConvCfg::unit(0));
        let taps = kernels::gaussian_taps(spec.smoother_sigma);
        Ok(LocalNet {
            spec,
            convs,
            norms,
            head,
            taps,
        })
    }

    /// Wire the network into a graph. Returns the output node and, in
    /// training mode, the BN nodes whose batch statistics the caller must
    /// absorb into the running estimates.
    fn wire(&self, g: &mut Graph, x: Var, train: bool) -> (Var, Vec<(usize, Var)>) {
        let mut bn_nodes = Vec::new();
        let mut norm = |g: &mut Graph, i: usize, x: Var| -> Var {
            if train {
                let v = self.norms[i].forward_train(g, x);
                bn_nodes.push((i, v));
                v
            } else {
                self.norms[i].forward(g, x, false)
            }
        };

        // stem
        let mut h = self.convs[0].forward(g, x, train);
        h = norm(g, 0, h);
        h = g.relu(h);

        // residual pairs over the remaining layers; an odd leftover layer
        // runs as a plain conv-norm-relu
        let mut i = 1;
        while i + 1 < self.spec.n_layers {
            let skip = h;
            let mut y = self.convs[i].forward(g, h, train);
            y = norm(g, i, y);
            y = g.relu(y);
            y = self.convs[i + 1].forward(g, y, train);
            y = norm(g, i + 1, y);
            y = g.add(y, skip);
            h = g.relu(y);
            i += 2;
        }
        if i < self.spec.n_layers {
            let mut y = self.convs[i].forward(g, h, train);
            y = norm(g, i, y);
            h = g.relu(y);
        }

        let linear = self.head.forward(g, h, train);
        let out = g.gaussian(linear, &self.taps);
        (out, bn_nodes)
    }

    /// Evaluation-mode forward pass (frozen normalization statistics).
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        self.wire(g, x, false).0
    }

    /// Training-mode forward pass; updates BN running statistics.
    pub fn forward_train(&mut self, g: &mut Graph, x: Var) -> Var {
        let (out, bn_nodes) = self.wire(g, x, true);
        for (i, node) in bn_nodes {
            let (mean, var) = g.bn_stats(node);
            self.norms[i].absorb_batch_stats(&mean, &var);
        }
        out
    }

    fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let min = self.spec.min_input_dim();
        if h < min || w < min {
            return Err(Error::shape(
                "local net input",
                format!("at least {}x{}", min, min),
                format!("{}x{}", h, w),
            ));
        }
        Ok(())
    }
}

impl Params for LocalNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for c in &self.convs {
            c.visit(f);
        }
        for n in &self.norms {
            n.visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for c in &mut self.convs {
            c.visit_mut(f);
        }
        for n in &mut self.norms {
            n.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

/// Dense strut-likelihood map for a grid of intensities in `[0,1]`.
///
/// Deterministic in evaluation mode; the output has the same spatial
/// dimensions as the input.
pub fn local_forward(net: &LocalNet, image: &Grid) -> Result<HeatMap> {
    net.check_input(image.height(), image.width())?;
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::config(
            "local net input intensities must lie in [0,1]",
        ));
    }
    let mut g = Graph::new();
    let x = g.input(image.to_tensor());
    let out = net.forward(&mut g, x);
    Ok(HeatMap::prediction(Grid::from_tensor(g.value(out))))
}

/// Smooth a map with a normalized, ±3σ-truncated Gaussian kernel under
/// reflect padding.
pub fn gaussian_smooth(map: &Grid, sigma: f64) -> Result<Grid> {
    if sigma <= 0.0 {
        return Err(Error::config(format!("sigma {} must be positive", sigma)));
    }
    let taps = kernels::gaussian_taps(sigma);
    let r = taps.len() / 2;
    if r >= map.height() || r >= map.width() {
        return Err(Error::config(format!(
            "{}x{} map too small for smoothing radius {}",
            map.height(),
            map.width(),
            r
        )));
    }
    let mut out = vec![0.0; map.data().len()];
    kernels::gaussian_reflect_forward(
        map.data(),
        (1, map.height(), map.width()),
        &taps,
        &mut out,
    );
    Ok(Grid::from_vec(map.height(), map.width(), out))
}

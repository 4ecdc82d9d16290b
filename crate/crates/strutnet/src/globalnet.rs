//! Image-level refinement network and appearance discriminator.
//!
//! The refiner is an encoder/decoder over the pair (image, local detection
//! map): four downsampling levels ending in 2×2 max-pooling, a bottleneck,
//! and four upsampling levels with skip concatenation. Every level runs a
//! dual-branch block — a plain 3×3 convolution in parallel with a 3×3
//! dilation-2 convolution, summed — so local detail and a wider context are
//! mixed at each scale. Widths double per level from `base_width`.
//!
//! The attention module is a small 5-layer strided CNN that scores how much
//! a heatmap looks like a plausible strut layout for the given image; it is
//! trained adversarially and its score feeds the generator loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::kernels::ConvCfg;
use crate::nn::layers::{Conv2dLayer, ConvT2dLayer, DenseLayer, Params};
use crate::nn::Tensor;
use crate::types::{Grid, HeatMap, OctImage};

pub const LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalNetSpec {
    /// Channel width of the first level; doubles per level down to the
    /// bottleneck (base 16 gives a 256-wide bottleneck).
    pub base_width: usize,
}

impl Default for GlobalNetSpec {
    fn default() -> Self {
        GlobalNetSpec { base_width: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub base_width: usize,
}

impl Default for AttentionSpec {
    fn default() -> Self {
        AttentionSpec { base_width: 16 }
    }
}

/// Two parallel 3×3 branches, one regular (pad 1) and one with dilation 2
/// (pad 2), added elementwise. Both preserve spatial dims, so the sum is
/// well-formed for any input size.
pub struct DualBranch {
    pub regular: Conv2dLayer,
    pub dilated: Conv2dLayer,
}

impl DualBranch {
    pub fn new(name: &str, rng: &mut ChaCha8Rng, in_c: usize, out_c: usize) -> Self {
        DualBranch {
            regular: Conv2dLayer::new(
                format!("{}.reg", name),
                rng,
                in_c,
                out_c,
                3,
                ConvCfg::unit(1),
            ),
            dilated: Conv2dLayer::new(
                format!("{}.dil", name),
                rng,
                in_c,
                out_c,
                3,
                ConvCfg {
                    stride: 1,
                    pad: 2,
                    dilation: 2,
                },
            ),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Var {
        let a = self.regular.forward(g, x, trainable);
        let b = self.dilated.forward(g, x, trainable);
        g.add(a, b)
    }
}

impl Params for DualBranch {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.regular.visit(f);
        self.dilated.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.regular.visit_mut(f);
        self.dilated.visit_mut(f);
    }
}

/// Standalone dual-branch block application on a raw feature tensor.
pub fn dual_branch_block(block: &DualBranch, features: &Tensor) -> Result<Tensor> {
    let (c, _, _) = features.chw();
    let expect = block.regular.w.shape()[1];
    if c != expect {
        return Err(Error::shape(
            "dual branch block input",
            format!("{} channels", expect),
            format!("{} channels", c),
        ));
    }
    let mut g = Graph::new();
    let x = g.input(features.clone());
    let y = block.forward(&mut g, x, false);
    Ok(g.value(y).clone())
}

pub struct GlobalNet {
    pub spec: GlobalNetSpec,
    enc: Vec<DualBranch>,
    bottleneck: DualBranch,
    ups: Vec<ConvT2dLayer>,
    dec: Vec<DualBranch>,
    head: Conv2dLayer,
}

impl GlobalNet {
    pub fn new(spec: GlobalNetSpec, seed: u64) -> Result<Self> {
        if spec.base_width < 1 {
            return Err(Error::config("global net base width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = spec.base_width;
        let widths: Vec<usize> = (0..LEVELS).map(|k| b << k).collect();

        let mut enc = Vec::new();
        let mut in_c = 2;
        for (k, &w) in widths.iter().enumerate() {
            enc.push(DualBranch::new(&format!("global/enc{}", k), &mut rng, in_c, w));
            in_c = w;
        }
        let bottleneck = DualBranch::new("global/bottleneck", &mut rng, widths[LEVELS - 1], b << LEVELS);

        let mut ups = Vec::new();
        let mut dec = Vec::new();
        let mut up_in = b << LEVELS;
        for k in (0..LEVELS).rev() {
            let w = widths[k];
            ups.push(ConvT2dLayer::new(
                format!("global/up{}", k),
                &mut rng,
                up_in,
                w,
                2,
                2,
            ));
            dec.push(DualBranch::new(
                &format!("global/dec{}", k),
                &mut rng,
                2 * w,
                w,
            ));
            up_in = w;
        }
        let head = Conv2dLayer::new("global/head", &mut rng, b, 1, 1, ConvCfg::unit(0));
        Ok(GlobalNet {
            spec,
            enc,
            bottleneck,
            ups,
            dec,
            head,
        })
    }

    /// Wire the refiner: input channels are (image, local map).
    pub fn forward(&self, g: &mut Graph, image: Var, local_map: Var, trainable: bool) -> Var {
        let x = g.concat_c(image, local_map);
        let mut h = x;
        let mut skips = Vec::with_capacity(LEVELS);
        for block in &self.enc {
            let y = block.forward(g, h, trainable);
            let y = g.relu(y);
            skips.push(y);
            h = g.maxpool2(y);
        }
        let y = self.bottleneck.forward(g, h, trainable);
        h = g.relu(y);
        for (i, (up, block)) in self.ups.iter().zip(self.dec.iter()).enumerate() {
            let upsampled = up.forward(g, h, trainable);
            let skip = skips[LEVELS - 1 - i];
            let cat = g.concat_c(skip, upsampled);
            let y = block.forward(g, cat, trainable);
            h = g.relu(y);
        }
        self.head.forward(g, h, trainable)
    }
}

impl Params for GlobalNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for e in &self.enc {
            e.visit(f);
        }
        self.bottleneck.visit(f);
        for u in &self.ups {
            u.visit(f);
        }
        for d in &self.dec {
            d.visit(f);
        }
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for e in &mut self.enc {
            e.visit_mut(f);
        }
        self.bottleneck.visit_mut(f);
        for u in &mut self.ups {
            u.visit_mut(f);
        }
        for d in &mut self.dec {
            d.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

fn check_global_dims(h: usize, w: usize) -> Result<()> {
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::config(format!(
            "global net input dims {}x{} must be divisible by 16; pad or crop the inputs",
            h, w
        )));
    }
    Ok(())
}

/// Refine a local detection map in the context of its image. The output is
/// clamped to `[0,1]` for downstream point extraction; it has the same
/// dimensions as the inputs.
pub fn global_forward(net: &GlobalNet, image: &OctImage, local_map: &Grid) -> Result<HeatMap> {
    if (image.height(), image.width()) != (local_map.height(), local_map.width()) {
        return Err(Error::shape(
            "global net inputs",
            format!("{}x{}", image.height(), image.width()),
            format!("{}x{}", local_map.height(), local_map.width()),
        ));
    }
    check_global_dims(image.height(), image.width())?;
    let mut g = Graph::new();
    let img = g.input(image.grid.to_tensor());
    let map = g.input(local_map.to_tensor());
    let out = net.forward(&mut g, img, map, false);
    let mut grid = Grid::from_tensor(g.value(out));
    grid.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(HeatMap::prediction(grid))
}

/// 5-layer strided CNN scoring heatmap/image appearance compatibility.
pub struct AttentionNet {
    pub spec: AttentionSpec,
    convs: Vec<Conv2dLayer>,
    dense: DenseLayer,
}

impl AttentionNet {
    pub fn new(spec: AttentionSpec, seed: u64) -> Result<Self> {
        if spec.base_width < 1 {
            return Err(Error::config("attention base width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = spec.base_width;
        let widths = [b, 2 * b, 4 * b, 4 * b, 4 * b];
        let mut convs = Vec::new();
        let mut in_c = 2;
        for (i, &w) in widths.iter().enumerate() {
            convs.push(Conv2dLayer::new(
                format!("attention/conv{}", i),
                &mut rng,
                in_c,
                w,
                3,
                ConvCfg {
                    stride: 2,
                    pad: 1,
                    dilation: 1,
                },
            ));
            in_c = w;
        }
        let dense = DenseLayer::new("attention/score", &mut rng, 4 * b, 1);
        Ok(AttentionNet { spec, convs, dense })
    }

    /// Scalar score node in (0,1): sigmoid over a pooled embedding of the
    /// (heatmap, image) pair.
    pub fn forward(&self, g: &mut Graph, map: Var, image: Var, trainable: bool) -> Var {
        let mut h = g.concat_c(map, image);
        for conv in &self.convs {
            h = conv.forward(g, h, trainable);
            h = g.leaky_relu(h, 0.1);
        }
        let pooled = g.global_avg_pool(h);
        let score = self.dense.forward(g, pooled, trainable);
        g.sigmoid(score)
    }
}

impl Params for AttentionNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for c in &self.convs {
            c.visit(f);
        }
        self.dense.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for c in &mut self.convs {
            c.visit_mut(f);
        }
        self.dense.visit_mut(f);
    }
}

/// Appearance score of a heatmap in the context of an image; strictly
/// inside (0,1). Higher means more ground-truth-like.
pub fn attention_forward(net: &AttentionNet, map: &Grid, image: &Grid) -> Result<f64> {
    if (map.height(), map.width()) != (image.height(), image.width()) {
        return Err(Error::shape(
            "attention inputs",
            format!("{}x{}", image.height(), image.width()),
            format!("{}x{}", map.height(), map.width()),
        ));
    }
    let mut g = Graph::new();
    let m = g.input(map.to_tensor());
    let i = g.input(image.to_tensor());
    let s = net.forward(&mut g, m, i, false);
    Ok(g.value(s).item().clamp(1e-7, 1.0 - 1e-7))
}

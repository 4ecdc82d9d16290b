//! Losses and the two-stage training procedure.
//!
//! Stage one trains the local detector on 64×64 patches with plain L1
//! against rendered target disks, sampling a 50/50 mix of strut-containing
//! and background patches to counter class imbalance. Stage two freezes the
//! local net, precomputes its dense maps, and trains the global refiner
//! adversarially: per sample one discriminator update on
//! `-(ln A(M,I) + ln(1 - A(P,I)))` with the prediction held constant, then
//! one generator update on the masked-L1 similarity loss plus
//! `adv_weight * (-ln A(P,I))` (the non-saturating surrogate).
//!
//! Seeded runs are bit-reproducible: sample order, patch draws and every
//! reduction are fixed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::fsio::atomic_write_str;
use crate::globalnet::{AttentionNet, AttentionSpec, GlobalNet, GlobalNetSpec};
use crate::localnet::{LocalNet, LocalNetSpec};
use crate::nn::graph::{Graph, Var};
use crate::nn::layers::Params;
use crate::nn::{Adam, Tensor};
use crate::pipeline::{dense_local_map, TileGrid};
use crate::synth::render_mask;
use crate::types::{Grid, HeatMap, HeatMapRole, StrutPointSet};

const LOG_EPS: f64 = 1e-7;

/// Training hyperparameters shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Only "adam" is supported.
    pub optimizer: String,
    pub learning_rate: f64,
    /// Gradients are averaged over this many samples per optimizer step.
    pub batch_size: usize,
    /// Weight of the adversarial term in the generator loss.
    pub adv_weight: f64,
    pub seed: u64,
    /// Emit a numbered checkpoint every this many epochs (0 = only final).
    pub checkpoint_every: usize,
    /// Patches drawn per image per epoch in local training.
    pub patches_per_image: usize,
    /// Side length of local training patches.
    pub patch_size: usize,
    /// Disk radius when rendering target heatmaps.
    pub footprint_radius: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            optimizer: "adam".into(),
            learning_rate: 0.001,
            batch_size: 1,
            adv_weight: 0.1,
            seed: 7,
            checkpoint_every: 0,
            patches_per_image: 8,
            patch_size: 64,
            footprint_radius: 3.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.optimizer != "adam" {
            return Err(Error::config(format!(
                "unsupported optimizer '{}'; only 'adam' is available",
                self.optimizer
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.adv_weight < 0.0 {
            return Err(Error::config("adv_weight must be non-negative"));
        }
        if self.patches_per_image < 1 || self.patch_size < 8 {
            return Err(Error::config("patch sampling configuration is degenerate"));
        }
        if self.footprint_radius < 1.0 {
            return Err(Error::config("footprint_radius must be at least 1"));
        }
        Ok(())
    }
}

/// One row of the loss-curve CSV: `epoch,split,loss_name,value`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub split: String,
    pub name: String,
    pub value: f64,
}

pub fn loss_rows_to_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("epoch,split,loss_name,value\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.split, r.name, r.value));
    }
    out
}

/// Foreground indicator `ceil(M)`: 1 wherever the target is positive.
fn foreground_mask(m: &Tensor) -> Tensor {
    m.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Graph node for the similarity loss
/// `L1(ceil(M)*P, M) + L1((1-ceil(M))*P, 0)` with mean reduction: the
/// foreground term matches the prediction to the target on the strut
/// footprint, the background term penalizes any response elsewhere.
pub fn loss_similar_node(g: &mut Graph, p: Var, m: &Tensor) -> Var {
    let mask = foreground_mask(m);
    let inv_mask = mask.map(|v| 1.0 - v);
    let m_in = g.input(m.clone());
    let mask_in = g.input(mask);
    let inv_in = g.input(inv_mask);
    let fg_prod = g.mul(p, mask_in);
    let fg_diff = g.sub(fg_prod, m_in);
    let fg = g.mean_abs(fg_diff);
    let bg_prod = g.mul(p, inv_in);
    let bg = g.mean_abs(bg_prod);
    g.add(fg, bg)
}

/// Similarity loss between a prediction and a target heatmap.
pub fn loss_similar(p: &HeatMap, m: &HeatMap) -> Result<f64> {
    if (p.height(), p.width()) != (m.height(), m.width()) {
        return Err(Error::shape(
            "loss_similar inputs",
            format!("{}x{}", m.height(), m.width()),
            format!("{}x{}", p.height(), p.width()),
        ));
    }
    if m.role != HeatMapRole::Target {
        return Err(Error::config("loss_similar expects a target heatmap as M"));
    }
    let mut g = Graph::new();
    let pv = g.input(p.grid.to_tensor());
    let loss = loss_similar_node(&mut g, pv, &m.grid.to_tensor());
    Ok(g.value(loss).item())
}

/// Discriminator objective: minimize `-(ln A(M,I) + ln(1 - A(P,I)))`, the
/// prediction entering as a constant. Logs are epsilon-guarded.
pub fn loss_attention_discriminator_node(
    g: &mut Graph,
    att: &AttentionNet,
    m: &Tensor,
    p_const: &Tensor,
    image: &Tensor,
) -> Var {
    let m_in = g.input(m.clone());
    let p_in = g.input(p_const.clone());
    let img = g.input(image.clone());
    let a_real = att.forward(g, m_in, img, true);
    let a_fake = att.forward(g, p_in, img, true);
    let ln_real = g.ln_clamped(a_real, LOG_EPS);
    let one_minus_fake = g.affine(a_fake, -1.0, 1.0);
    let ln_fake = g.ln_clamped(one_minus_fake, LOG_EPS);
    let sum = g.add(ln_real, ln_fake);
    g.affine(sum, -1.0, 0.0)
}

/// Generator surrogate: minimize `-ln A(P,I)` (non-saturating form), with
/// gradients flowing through the attention module into the prediction but
/// not into the discriminator weights.
pub fn loss_attention_generator_node(
    g: &mut Graph,
    att: &AttentionNet,
    p: Var,
    image: &Tensor,
) -> Var {
    let img = g.input(image.clone());
    let a = att.forward(g, p, img, false);
    let ln = g.ln_clamped(a, LOG_EPS);
    g.affine(ln, -1.0, 0.0)
}

/// Value form of the discriminator loss.
pub fn loss_attention_discriminator(
    att: &AttentionNet,
    m: &HeatMap,
    p: &HeatMap,
    image: &Grid,
) -> Result<f64> {
    check_same_dims(&m.grid, &p.grid, image)?;
    let mut g = Graph::new();
    let loss = loss_attention_discriminator_node(
        &mut g,
        att,
        &m.grid.to_tensor(),
        &p.grid.to_tensor(),
        &image.to_tensor(),
    );
    Ok(g.value(loss).item())
}

/// Value form of the generator attention loss.
pub fn loss_attention_generator(att: &AttentionNet, p: &HeatMap, image: &Grid) -> Result<f64> {
    if (p.height(), p.width()) != (image.height(), image.width()) {
        return Err(Error::shape(
            "attention generator loss inputs",
            format!("{}x{}", image.height(), image.width()),
            format!("{}x{}", p.height(), p.width()),
        ));
    }
    let mut g = Graph::new();
    let pv = g.input(p.grid.to_tensor());
    let loss = loss_attention_generator_node(&mut g, att, pv, &image.to_tensor());
    Ok(g.value(loss).item())
}

fn check_same_dims(a: &Grid, b: &Grid, c: &Grid) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width())
        || (a.height(), a.width()) != (c.height(), c.width())
    {
        return Err(Error::shape(
            "attention loss inputs",
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{} / {}x{}", b.height(), b.width(), c.height(), c.width()),
        ));
    }
    Ok(())
}

/// Draw one training patch. Half the draws target a patch containing a
/// ground-truth strut, half a strut-free patch (when one exists; small
/// images where every window holds a strut fall back to a uniform draw).
/// Returns (input patch, target patch, wants_strut flag).
pub fn sample_patch(
    rng: &mut ChaCha8Rng,
    image: &Grid,
    mask: &Grid,
    points: &StrutPointSet,
    patch: usize,
) -> (Grid, Grid, bool) {
    let (h, w) = (image.height(), image.width());
    assert!(h >= patch && w >= patch, "image smaller than patch");
    let max_oy = h - patch;
    let max_ox = w - patch;
    let want_strut = rng.random_range(0.0..1.0) < 0.5;

    let contains = |oy: usize, ox: usize| {
        points.points.iter().any(|p| {
            p.y >= oy as f64 && p.y < (oy + patch) as f64 && p.x >= ox as f64 && p.x < (ox + patch) as f64
        })
    };

    let (oy, ox) = if max_oy == 0 && max_ox == 0 {
        (0, 0)
    } else if want_strut && !points.is_empty() {
        // anchor a random strut at a random interior offset of the patch
        let p = &points.points[rng.random_range(0..points.len())];
        let inner = 8usize.min(patch / 4);
        let off_y = rng.random_range(inner..patch - inner);
        let off_x = rng.random_range(inner..patch - inner);
        let oy = (p.y as isize - off_y as isize).clamp(0, max_oy as isize) as usize;
        let ox = (p.x as isize - off_x as isize).clamp(0, max_ox as isize) as usize;
        (oy, ox)
    } else {
        // rejection-sample a strut-free window, falling back to uniform
        let mut pick = (rng.random_range(0..=max_oy), rng.random_range(0..=max_ox));
        if !want_strut {
            for _ in 0..50 {
                if !contains(pick.0, pick.1) {
                    break;
                }
                pick = (rng.random_range(0..=max_oy), rng.random_range(0..=max_ox));
            }
        }
        pick
    };

    (
        image.crop(oy, ox, patch, patch),
        mask.crop(oy, ox, patch, patch),
        want_strut,
    )
}

fn apply_grads(net: &mut dyn Params, adam: &mut Adam, grads: &std::collections::BTreeMap<String, Tensor>) {
    adam.begin_step();
    net.visit_mut(&mut |path, t| {
        if let Some(g) = grads.get(path) {
            adam.update(path, t, g);
        }
    });
}

fn merge_grads(
    into: &mut std::collections::BTreeMap<String, Tensor>,
    from: std::collections::BTreeMap<String, Tensor>,
) {
    for (k, v) in from {
        match into.get_mut(&k) {
            Some(t) => t.add_assign(&v),
            None => {
                into.insert(k, v);
            }
        }
    }
}

fn scale_grads(grads: &mut std::collections::BTreeMap<String, Tensor>, k: f64) {
    for t in grads.values_mut() {
        for v in t.data_mut() {
            *v *= k;
        }
    }
}

/// One local-net optimization step on a single patch/target pair.
/// Returns the L1 loss before the update.
pub fn local_train_step(
    net: &mut LocalNet,
    adam: &mut Adam,
    patch: &Grid,
    target: &Grid,
) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(patch.to_tensor());
    let out = net.forward_train(&mut g, x);
    let t = g.input(target.to_tensor());
    let diff = g.sub(out, t);
    let loss = g.mean_abs(diff);
    let loss_value = g.value(loss).item();
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!("non-finite local loss {}", loss_value)));
    }
    g.backward(loss);
    let grads = g.trainable_grads();
    apply_grads(net, adam, &grads);
    Ok(loss_value)
}

/// Rendered target masks for a dataset, computed once.
fn render_targets(dataset: &[Sample], radius: f64) -> Result<Vec<Grid>> {
    dataset
        .iter()
        .map(|s| {
            render_mask(&s.points, (s.image.height(), s.image.width()), radius)
                .map(|h| h.grid)
        })
        .collect()
}

fn dump_state(out_dir: Option<&Path>, net: &dyn Params, label: &str) {
    if let Some(dir) = out_dir {
        let meta = checkpoint::CheckpointMeta::default();
        let params = checkpoint::ModelParams::from_net(net, meta);
        let _ = checkpoint::write(&dir.join(format!("abort_{}.ckpt", label)), &params);
    }
}

/// Train the local detector. Returns the trained net and the loss curve;
/// when `out_dir` is given, writes `local.ckpt`, periodic checkpoints, a
/// best-validation checkpoint and `local_losses.csv` there.
pub fn train_local(
    dataset: &[Sample],
    val: Option<&[Sample]>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(LocalNet, Vec<LossRow>)> {
    train_local_with_spec(dataset, val, cfg, LocalNetSpec::default(), out_dir)
}

pub fn train_local_with_spec(
    dataset: &[Sample],
    val: Option<&[Sample]>,
    cfg: &TrainConfig,
    spec: LocalNetSpec,
    out_dir: Option<&Path>,
) -> Result<(LocalNet, Vec<LossRow>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    for s in dataset {
        if s.image.height() < cfg.patch_size || s.image.width() < cfg.patch_size {
            return Err(Error::config(format!(
                "sample {} ({}x{}) is smaller than the {}px training patch",
                s.id,
                s.image.height(),
                s.image.width(),
                cfg.patch_size
            )));
        }
    }
    let targets = render_targets(dataset, cfg.footprint_radius)?;
    let val_targets = match val {
        Some(v) => Some(render_targets(v, cfg.footprint_radius)?),
        None => None,
    };

    let mut net = LocalNet::new(spec, cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x10ca1);

    let mut rows = Vec::new();
    let mut best_val = f64::INFINITY;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        let mut pending: std::collections::BTreeMap<String, Tensor> = Default::default();
        let mut in_batch = 0usize;
        for &idx in &order {
            let sample = &dataset[idx];
            for _ in 0..cfg.patches_per_image {
                let (patch, target, _) = sample_patch(
                    &mut rng,
                    &sample.image.grid,
                    &targets[idx],
                    &sample.points,
                    cfg.patch_size,
                );
                if cfg.batch_size == 1 {
                    let loss = local_train_step(&mut net, &mut adam, &patch, &target)
                        .map_err(|e| {
                            dump_state(out_dir, &net, "local");
                            Error::Numeric(format!(
                                "epoch {}, sample {}: {}",
                                epoch, sample.id, e
                            ))
                        })?;
                    epoch_loss += loss;
                    steps += 1;
                } else {
                    // accumulate gradients over the batch, then step once
                    let mut g = Graph::new();
                    let x = g.input(patch.to_tensor());
                    let out = net.forward_train(&mut g, x);
                    let t = g.input(target.to_tensor());
                    let diff = g.sub(out, t);
                    let loss = g.mean_abs(diff);
                    let loss_value = g.value(loss).item();
                    if !loss_value.is_finite() {
                        dump_state(out_dir, &net, "local");
                        return Err(Error::Numeric(format!(
                            "epoch {}, sample {}: non-finite local loss",
                            epoch, sample.id
                        )));
                    }
                    g.backward(loss);
                    merge_grads(&mut pending, g.trainable_grads());
                    in_batch += 1;
                    epoch_loss += loss_value;
                    steps += 1;
                    if in_batch == cfg.batch_size {
                        scale_grads(&mut pending, 1.0 / in_batch as f64);
                        apply_grads(&mut net, &mut adam, &pending);
                        pending.clear();
                        in_batch = 0;
                    }
                }
            }
        }
        if in_batch > 0 {
            scale_grads(&mut pending, 1.0 / in_batch as f64);
            apply_grads(&mut net, &mut adam, &pending);
        }
        let mean = epoch_loss / steps.max(1) as f64;
        rows.push(LossRow {
            epoch,
            split: "train".into(),
            name: "l1".into(),
            value: mean,
        });

        if let (Some(val), Some(vt)) = (val, &val_targets) {
            let vloss = validate_local(&net, val, vt)?;
            rows.push(LossRow {
                epoch,
                split: "val".into(),
                name: "l1".into(),
                value: vloss,
            });
            if let Some(dir) = out_dir {
                if vloss < best_val {
                    best_val = vloss;
                    checkpoint::save_local(&dir.join("local_best.ckpt"), &net, epoch as u64, vloss)?;
                }
            }
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                checkpoint::save_local(
                    &dir.join(format!("local_epoch{:04}.ckpt", epoch)),
                    &net,
                    epoch as u64,
                    mean,
                )?;
            }
        }
    }
    if let Some(dir) = out_dir {
        let final_loss = rows
            .iter()
            .rev()
            .find(|r| r.split == "train")
            .map(|r| r.value)
            .unwrap_or(f64::NAN);
        checkpoint::save_local(&dir.join("local.ckpt"), &net, cfg.epochs as u64, final_loss)?;
        atomic_write_str(&dir.join("local_losses.csv"), &loss_rows_to_csv(&rows))?;
    }
    Ok((net, rows))
}

fn validate_local(net: &LocalNet, val: &[Sample], targets: &[Grid]) -> Result<f64> {
    let mut total = 0.0;
    for (s, t) in val.iter().zip(targets.iter()) {
        let map = dense_local_map(net, &s.image.grid, None)?;
        let p = HeatMap::prediction(map);
        let m = HeatMap::target(t.clone())?;
        total += loss_similar(&p, &m)?;
    }
    Ok(total / val.len().max(1) as f64)
}

/// How the global net's second input channel is produced during training
/// and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalInput {
    /// Dense maps from a frozen local net (the full pipeline).
    LocalMap,
    /// All-zero channel (the image-only variant used by the component
    /// comparison).
    Zero,
}

/// Specs used when constructing the stage-two networks.
#[derive(Debug, Clone, Default)]
pub struct GlobalTrainSpecs {
    pub global: GlobalNetSpec,
    pub attention: AttentionSpec,
}

/// Train the global refiner and attention discriminator against a frozen
/// local net. Per sample: one discriminator step, then one generator step.
/// Returns both networks and the loss curve; with `out_dir` set, writes
/// `global.ckpt` (or `global_only.ckpt` in zero-input mode), periodic and
/// best-validation checkpoints, and `global_losses.csv`.
#[allow(clippy::too_many_arguments)]
pub fn train_global(
    dataset: &[Sample],
    val: Option<&[Sample]>,
    local: &LocalNet,
    cfg: &TrainConfig,
    specs: GlobalTrainSpecs,
    input_mode: GlobalInput,
    tiles: Option<&TileGrid>,
    out_dir: Option<&Path>,
) -> Result<(GlobalNet, AttentionNet, Vec<LossRow>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    let targets = render_targets(dataset, cfg.footprint_radius)?;
    let val_targets = match val {
        Some(v) => Some(render_targets(v, cfg.footprint_radius)?),
        None => None,
    };

    // The local net is frozen, so its dense maps are constants.
    let local_maps = precompute_local_maps(dataset, local, input_mode, tiles)?;
    let val_local_maps = match val {
        Some(v) => Some(precompute_local_maps(v, local, input_mode, tiles)?),
        None => None,
    };

    let mut global = GlobalNet::new(specs.global, cfg.seed.wrapping_add(1))?;
    let mut attention = AttentionNet::new(specs.attention, cfg.seed.wrapping_add(2))?;
    let mut adam_g = Adam::new(cfg.learning_rate);
    let mut adam_d = Adam::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x910ba1);

    let ckpt_name = match input_mode {
        GlobalInput::LocalMap => "global",
        GlobalInput::Zero => "global_only",
    };

    let mut rows = Vec::new();
    let mut best_val = f64::INFINITY;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let (mut sum_sim, mut sum_d, mut sum_g, mut sum_total) = (0.0, 0.0, 0.0, 0.0);
        let mut steps = 0usize;

        let mut pend_d: std::collections::BTreeMap<String, Tensor> = Default::default();
        let mut pend_g: std::collections::BTreeMap<String, Tensor> = Default::default();
        let mut in_batch = 0usize;

        for &idx in &order {
            let sample = &dataset[idx];
            let img_t = sample.image.grid.to_tensor();
            let lmap_t = local_maps[idx].to_tensor();
            let m_t = targets[idx].to_tensor();

            // One generator forward serves both steps: its value is the
            // constant P for the discriminator update, and the same graph
            // is extended afterwards for the generator update (the
            // adversarial node is built after the discriminator update, so
            // it binds the fresh discriminator weights).
            let mut g2 = Graph::new();
            let img2 = g2.input(img_t.clone());
            let lmap2 = g2.input(lmap_t);
            let p = global.forward(&mut g2, img2, lmap2, true);
            let p_value = g2.value(p).clone();

            // discriminator step: P enters as a constant
            let mut g1 = Graph::new();
            let d_loss =
                loss_attention_discriminator_node(&mut g1, &attention, &m_t, &p_value, &img_t);
            let d_value = g1.value(d_loss).item();
            if !d_value.is_finite() {
                dump_state(out_dir, &attention, "attention");
                return Err(Error::Numeric(format!(
                    "epoch {}, sample {}: non-finite discriminator loss",
                    epoch, sample.id
                )));
            }
            g1.backward(d_loss);
            let d_grads = g1.trainable_grads();
            drop(g1);

            // generator step: similarity plus weighted adversarial term,
            // scored by the just-updated discriminator in batch-1 mode
            let apply_now = cfg.batch_size == 1;
            if apply_now {
                apply_grads(&mut attention, &mut adam_d, &d_grads);
            } else {
                merge_grads(&mut pend_d, d_grads);
            }

            let sim = loss_similar_node(&mut g2, p, &m_t);
            let adv = loss_attention_generator_node(&mut g2, &attention, p, &img_t);
            let weighted = g2.affine(adv, cfg.adv_weight, 0.0);
            let total = g2.add(sim, weighted);
            let (sim_v, adv_v, total_v) = (
                g2.value(sim).item(),
                g2.value(adv).item(),
                g2.value(total).item(),
            );
            if !total_v.is_finite() {
                dump_state(out_dir, &global, "global");
                return Err(Error::Numeric(format!(
                    "epoch {}, sample {}: non-finite generator loss",
                    epoch, sample.id
                )));
            }
            g2.backward(total);
            let g_grads = g2.trainable_grads();
            drop(g2);
            if apply_now {
                apply_grads(&mut global, &mut adam_g, &g_grads);
            } else {
                merge_grads(&mut pend_g, g_grads);
                in_batch += 1;
                if in_batch == cfg.batch_size {
                    scale_grads(&mut pend_d, 1.0 / in_batch as f64);
                    scale_grads(&mut pend_g, 1.0 / in_batch as f64);
                    apply_grads(&mut attention, &mut adam_d, &pend_d);
                    apply_grads(&mut global, &mut adam_g, &pend_g);
                    pend_d.clear();
                    pend_g.clear();
                    in_batch = 0;
                }
            }

            sum_sim += sim_v;
            sum_d += d_value;
            sum_g += adv_v;
            sum_total += total_v;
            steps += 1;
        }
        if in_batch > 0 {
            scale_grads(&mut pend_d, 1.0 / in_batch as f64);
            scale_grads(&mut pend_g, 1.0 / in_batch as f64);
            apply_grads(&mut attention, &mut adam_d, &pend_d);
            apply_grads(&mut global, &mut adam_g, &pend_g);
            pend_d.clear();
            pend_g.clear();
        }

        let n = steps.max(1) as f64;
        for (name, v) in [
            ("similar", sum_sim / n),
            ("attention_d", sum_d / n),
            ("attention_g", sum_g / n),
            ("total", sum_total / n),
        ] {
            rows.push(LossRow {
                epoch,
                split: "train".into(),
                name: name.into(),
                value: v,
            });
        }

        if let (Some(val), Some(vt), Some(vm)) = (val, &val_targets, &val_local_maps) {
            let vloss = validate_global(&global, val, vt, vm)?;
            rows.push(LossRow {
                epoch,
                split: "val".into(),
                name: "similar".into(),
                value: vloss,
            });
            if let Some(dir) = out_dir {
                if vloss < best_val {
                    best_val = vloss;
                    checkpoint::save_global(
                        &dir.join(format!("{}_best.ckpt", ckpt_name)),
                        &global,
                        &attention,
                        epoch as u64,
                        vloss,
                    )?;
                }
            }
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                checkpoint::save_global(
                    &dir.join(format!("{}_epoch{:04}.ckpt", ckpt_name, epoch)),
                    &global,
                    &attention,
                    epoch as u64,
                    sum_total / n,
                )?;
            }
        }
    }
    if let Some(dir) = out_dir {
        let final_loss = rows
            .iter()
            .rev()
            .find(|r| r.split == "train" && r.name == "total")
            .map(|r| r.value)
            .unwrap_or(f64::NAN);
        checkpoint::save_global(
            &dir.join(format!("{}.ckpt", ckpt_name)),
            &global,
            &attention,
            cfg.epochs as u64,
            final_loss,
        )?;
        atomic_write_str(&dir.join(format!("{}_losses.csv", ckpt_name)), &loss_rows_to_csv(&rows))?;
    }
    Ok((global, attention, rows))
}

fn precompute_local_maps(
    samples: &[Sample],
    local: &LocalNet,
    mode: GlobalInput,
    tiles: Option<&TileGrid>,
) -> Result<Vec<Grid>> {
    samples
        .iter()
        .map(|s| match mode {
            GlobalInput::Zero => Ok(Grid::zeros(s.image.height(), s.image.width())),
            GlobalInput::LocalMap => dense_local_map(local, &s.image.grid, tiles),
        })
        .collect()
}

fn validate_global(
    global: &GlobalNet,
    val: &[Sample],
    targets: &[Grid],
    local_maps: &[Grid],
) -> Result<f64> {
    let mut total = 0.0;
    for ((s, t), lm) in val.iter().zip(targets.iter()).zip(local_maps.iter()) {
        let refined = crate::globalnet::global_forward(global, &s.image, lm)?;
        let m = HeatMap::target(t.clone())?;
        total += loss_similar(&refined, &m)?;
    }
    Ok(total / val.len().max(1) as f64)
}

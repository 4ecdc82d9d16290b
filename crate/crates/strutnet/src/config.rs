//! Flat, human-editable run configuration.
//!
//! One namespace of `key = value` entries covers the phantom generator,
//! training, network sizes, inference and evaluation. Precedence is
//! defaults < config file < command-line overrides, and unknown keys are
//! rejected at both the file and override layers. The same struct is the
//! single source of truth for the defaults printed in `--help`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::globalnet::{AttentionSpec, GlobalNetSpec};
use crate::localnet::LocalNetSpec;
use crate::pipeline::{DetectConfig, ExtractConfig, TileGrid};
use crate::synth::SynthConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // phantom generator
    pub image_size: usize,
    pub lumen_radius_range: (f64, f64),
    pub wall_thickness_range: (f64, f64),
    pub strut_count_range: (usize, usize),
    pub strut_bloom_sigma: f64,
    pub shadow_depth: f64,
    pub intima_coverage_prob: f64,
    pub speckle_strength: f64,
    pub catheter_ring_radius: f64,
    pub distractor_count_range: (usize, usize),
    pub distractor_strength: f64,
    pub rng_seed: u64,

    // training
    pub epochs: usize,
    pub optimizer: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adv_weight: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub patches_per_image: usize,
    pub patch_size: usize,
    pub footprint_radius: f64,

    // network sizes
    pub local_layers: usize,
    pub local_channels: usize,
    pub smoother_sigma: f64,
    pub global_base_width: usize,
    pub attention_base_width: usize,

    // inference
    pub tile_stride: usize,
    pub tile_margin: usize,
    pub threshold: f64,
    pub min_separation: f64,
    pub refine_passes: usize,

    // evaluation
    pub tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        let local = LocalNetSpec::default();
        let global = GlobalNetSpec::default();
        let attention = AttentionSpec::default();
        let tiles = TileGrid::default();
        let extract = ExtractConfig::default();
        RunConfig {
            image_size: synth.image_size,
            lumen_radius_range: synth.lumen_radius_range,
            wall_thickness_range: synth.wall_thickness_range,
            strut_count_range: synth.strut_count_range,
            strut_bloom_sigma: synth.strut_bloom_sigma,
            shadow_depth: synth.shadow_depth,
            intima_coverage_prob: synth.intima_coverage_prob,
            speckle_strength: synth.speckle_strength,
            catheter_ring_radius: synth.catheter_ring_radius,
            distractor_count_range: synth.distractor_count_range,
            distractor_strength: synth.distractor_strength,
            rng_seed: synth.rng_seed,

            epochs: train.epochs,
            optimizer: train.optimizer,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            adv_weight: train.adv_weight,
            seed: train.seed,
            checkpoint_every: train.checkpoint_every,
            patches_per_image: train.patches_per_image,
            patch_size: train.patch_size,
            footprint_radius: train.footprint_radius,

            local_layers: local.n_layers,
            local_channels: local.channels,
            smoother_sigma: local.smoother_sigma,
            global_base_width: global.base_width,
            attention_base_width: attention.base_width,

            tile_stride: tiles.stride,
            tile_margin: tiles.margin,
            threshold: extract.threshold,
            min_separation: extract.min_separation,
            refine_passes: 1,

            tolerance: crate::eval::DEFAULT_TOLERANCE,
        }
    }
}

impl RunConfig {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            image_size: self.image_size,
            lumen_radius_range: self.lumen_radius_range,
            wall_thickness_range: self.wall_thickness_range,
            strut_count_range: self.strut_count_range,
            strut_bloom_sigma: self.strut_bloom_sigma,
            shadow_depth: self.shadow_depth,
            intima_coverage_prob: self.intima_coverage_prob,
            speckle_strength: self.speckle_strength,
            catheter_ring_radius: self.catheter_ring_radius,
            distractor_count_range: self.distractor_count_range,
            distractor_strength: self.distractor_strength,
            rng_seed: self.rng_seed,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            optimizer: self.optimizer.clone(),
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            adv_weight: self.adv_weight,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            patches_per_image: self.patches_per_image,
            patch_size: self.patch_size,
            footprint_radius: self.footprint_radius,
        }
    }

    pub fn local_spec(&self) -> LocalNetSpec {
        LocalNetSpec {
            n_layers: self.local_layers,
            channels: self.local_channels,
            smoother_sigma: self.smoother_sigma,
        }
    }

    pub fn global_spec(&self) -> GlobalNetSpec {
        GlobalNetSpec {
            base_width: self.global_base_width,
        }
    }

    pub fn attention_spec(&self) -> AttentionSpec {
        AttentionSpec {
            base_width: self.attention_base_width,
        }
    }

    pub fn tile_grid(&self) -> TileGrid {
        TileGrid {
            patch_size: self.patch_size,
            stride: self.tile_stride,
            margin: self.tile_margin,
        }
    }

    pub fn extract(&self) -> ExtractConfig {
        ExtractConfig {
            threshold: self.threshold,
            min_separation: self.min_separation,
        }
    }

    pub fn detect_config(&self, tiled: bool) -> DetectConfig {
        DetectConfig {
            tiles: tiled.then(|| self.tile_grid()),
            extract: self.extract(),
            refine_passes: self.refine_passes,
        }
    }

    /// Defaults, then the optional file, then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text).map_err(|e| Error::Parse {
                    path: p.to_path_buf(),
                    line: 1,
                    msg: format!("bad config: {}", e),
                })?
            }
            None => RunConfig::default(),
        };
        for (key, value) in overrides {
            cfg = cfg.with_override(key, value)?;
        }
        Ok(cfg)
    }

    /// Apply one `key=value` override; the key must name an existing
    /// config entry.
    pub fn with_override(&self, key: &str, value: &str) -> Result<RunConfig> {
        let mut table: toml::Table = toml::Table::try_from(self)
            .map_err(|e| Error::Config(format!("config serialization: {}", e)))?;
        if !table.contains_key(key) {
            return Err(Error::config(format!(
                "unknown config key '{}'; see --help for the full list",
                key
            )));
        }
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {}", value)) {
            Ok(mut t) => t.remove("v").unwrap(),
            Err(_) => toml::Value::String(value.to_string()),
        };
        table.insert(key.to_string(), parsed);
        table.try_into().map_err(|e| {
            Error::config(format!("override {}={} is invalid: {}", key, value, e))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization")
    }

    /// All keys with their default values, for help output.
    pub fn help_text() -> String {
        let defaults = RunConfig::default().to_toml();
        let mut out = String::from("Configuration keys and defaults (file/--set form):\n");
        for line in defaults.lines() {
            out.push_str("  ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

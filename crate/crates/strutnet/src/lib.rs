//! Stent strut detection in cross-sectional OCT images with a
//! local-global refinement pipeline.
//!
//! The crate covers the full workflow:
//!
//! - [`synth`] — reproducible synthetic OCT-like phantoms with known strut
//!   locations, plus rendering of point annotations into target heatmaps;
//! - [`localnet`] — a patch-based fully-convolutional detector tuned for
//!   recall;
//! - [`globalnet`] — an image-level encoder/decoder refiner with an
//!   appearance-scoring attention discriminator that prunes false positives;
//! - [`training`] — the masked-L1 and adversarial losses and the two-stage
//!   training procedure;
//! - [`pipeline`] — tiled dense inference, heatmap stitching and peak
//!   extraction to points;
//! - [`eval`] — tolerance-based optimal point matching and recall/precision
//!   reporting;
//! - [`plot`] — static overlay renderings for inspection.
//!
//! Everything numeric runs in f64 on the CPU through the small engine in
//! [`nn`]; seeded runs are bit-reproducible.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod globalnet;
pub mod localnet;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod synth;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use types::{Grid, HeatMap, HeatMapRole, OctImage, Point, Provenance, StrutPointSet};

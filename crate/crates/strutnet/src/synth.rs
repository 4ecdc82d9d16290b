//! Reproducible synthetic OCT-like phantoms with known strut locations.
//!
//! Each sample is a cross-sectional vessel: a dark lumen bounded by a bright
//! wall whose intensity decays radially, a catheter ring near the center,
//! strut blooms sitting on (or buried just under) the lumen boundary, each
//! casting a radial shadow outward, bright non-strut speckle clumps in the
//! tissue as distractors, and multiplicative speckle noise. Generation is a
//! pure function of `(config, index)`: the same pair always yields the
//! bit-identical image and point set.
//!
//! Intensities are snapped to the 16-bit grid (k/65535) as the final step,
//! so writing a sample to a 16-bit grayscale file and reading it back is an
//! exact round trip.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Grid, HeatMap, OctImage, Point, Provenance, StrutPointSet};

/// Minimum center-to-center spacing of ground-truth struts, in pixels.
/// Keeps rendered footprints disjoint so the target representation stays
/// information-preserving (see `render_mask` and point extraction).
pub const MIN_STRUT_SEPARATION: f64 = 9.0;

/// Configuration of the phantom generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Image side length in pixels; must be divisible by 16.
    pub image_size: usize,
    /// Lumen radius sampled uniformly from this range (pixels).
    pub lumen_radius_range: (f64, f64),
    /// Vessel wall thickness range (pixels); controls the radial decay.
    pub wall_thickness_range: (f64, f64),
    /// Inclusive range of strut counts per image.
    pub strut_count_range: (usize, usize),
    /// Gaussian radius of a strut bloom (pixels).
    pub strut_bloom_sigma: f64,
    /// Shadow attenuation in [0,1]; tissue behind a strut is multiplied by
    /// `1 - shadow_depth`.
    pub shadow_depth: f64,
    /// Probability that a strut is buried under neointima and rendered at
    /// reduced contrast.
    pub intima_coverage_prob: f64,
    /// Multiplicative speckle scale; intensities are clipped back to [0,1].
    pub speckle_strength: f64,
    /// Radius of the catheter sheath ring (pixels).
    pub catheter_ring_radius: f64,
    /// Inclusive range of bright non-strut tissue clumps per image; these
    /// resemble strut blooms locally but cast no shadow and sit off the
    /// stent ring.
    pub distractor_count_range: (usize, usize),
    /// Peak brightness of distractor clumps relative to strut blooms.
    pub distractor_strength: f64,
    /// Master seed; sample `index` selects an independent substream.
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 512,
            lumen_radius_range: (110.0, 170.0),
            wall_thickness_range: (35.0, 70.0),
            strut_count_range: (6, 14),
            strut_bloom_sigma: 2.5,
            shadow_depth: 0.65,
            intima_coverage_prob: 0.25,
            speckle_strength: 0.15,
            catheter_ring_radius: 22.0,
            distractor_count_range: (2, 6),
            distractor_strength: 0.6,
            rng_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn min_strut_separation(&self) -> f64 {
        (2.0 * self.strut_bloom_sigma).max(MIN_STRUT_SEPARATION)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size % 16 != 0 || self.image_size == 0 {
            return Err(Error::config(format!(
                "image_size {} must be a positive multiple of 16",
                self.image_size
            )));
        }
        for (name, (lo, hi)) in [
            ("lumen_radius_range", self.lumen_radius_range),
            ("wall_thickness_range", self.wall_thickness_range),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi < lo {
                return Err(Error::config(format!("{} ({}, {}) is not a valid range", name, lo, hi)));
            }
        }
        if self.strut_count_range.1 < self.strut_count_range.0 {
            return Err(Error::config("strut_count_range is empty"));
        }
        if self.distractor_count_range.1 < self.distractor_count_range.0 {
            return Err(Error::config("distractor_count_range is empty"));
        }
        for (name, p) in [
            ("shadow_depth", self.shadow_depth),
            ("intima_coverage_prob", self.intima_coverage_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{} = {} must lie in [0,1]", name, p)));
            }
        }
        if self.strut_bloom_sigma <= 0.0 {
            return Err(Error::config("strut_bloom_sigma must be positive"));
        }
        if self.speckle_strength < 0.0 {
            return Err(Error::config("speckle_strength must be non-negative"));
        }
        if self.catheter_ring_radius <= 0.0
            || self.catheter_ring_radius >= self.lumen_radius_range.0 - 4.0
        {
            return Err(Error::config(
                "catheter_ring_radius must be positive and fit inside the smallest lumen",
            ));
        }

        // The strut ring with burial depth, bloom support and center jitter
        // must fit inside the frame.
        let reach = self.lumen_radius_range.1
            + 0.6 * self.wall_thickness_range.1
            + 3.0 * self.strut_bloom_sigma
            + self.center_jitter()
            + 2.0;
        if reach > self.image_size as f64 / 2.0 {
            return Err(Error::config(format!(
                "vessel (reach {:.1}px) does not fit in a {}px image",
                reach, self.image_size
            )));
        }

        // Struts at the minimum lumen radius must fit on the circumference
        // at the minimum separation.
        let max_count = self.strut_count_range.1 as f64;
        if max_count > 0.0 {
            let dtheta = self.min_angular_gap(self.lumen_radius_range.0);
            if max_count * dtheta > 2.0 * PI {
                return Err(Error::config(format!(
                    "{} struts cannot fit on a lumen of radius {} at {}px minimum separation",
                    self.strut_count_range.1,
                    self.lumen_radius_range.0,
                    self.min_strut_separation()
                )));
            }
        }
        Ok(())
    }

    fn center_jitter(&self) -> f64 {
        self.image_size as f64 / 32.0
    }

    /// Angular gap guaranteeing the chord at the worst-case radius stays
    /// at or above the minimum separation (radial jitter is ±1.5 px).
    fn min_angular_gap(&self, lumen_radius: f64) -> f64 {
        let r = (lumen_radius - 2.0).max(4.0);
        2.0 * (self.min_strut_separation() / (2.0 * r)).min(1.0).asin() * 1.05
    }
}

#[derive(Clone, Copy)]
struct Strut {
    x: f64,
    y: f64,
    radius: f64,
    angle: f64,
    amp: f64,
    buried: bool,
}

/// Generate sample `index`: a phantom image plus its ground-truth strut
/// centers. Deterministic in `(config.rng_seed, index)`.
pub fn generate_sample(config: &SynthConfig, index: u64) -> Result<(OctImage, StrutPointSet)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(index);

    let size = config.image_size;
    let half = size as f64 / 2.0;

    let lumen_r = rng.random_range(config.lumen_radius_range.0..=config.lumen_radius_range.1);
    let wall_t = rng.random_range(config.wall_thickness_range.0..=config.wall_thickness_range.1);

    // Vessel center, jittered but keeping the whole strut ring in frame.
    let reach = lumen_r + 0.6 * wall_t + 3.0 * config.strut_bloom_sigma + 2.0;
    let jmax = config.center_jitter().min(half - reach).max(0.0);
    let cx = half + rng.random_range(-jmax..=jmax);
    let cy = half + rng.random_range(-jmax..=jmax);

    // Catheter ring somewhere inside the lumen.
    let cath_off_max = (lumen_r - config.catheter_ring_radius - 4.0).max(0.0).min(0.35 * lumen_r);
    let cath_angle = rng.random_range(0.0..2.0 * PI);
    let cath_off = rng.random_range(0.0..=cath_off_max);
    let (cath_x, cath_y) = (
        cx + cath_off * cath_angle.cos(),
        cy + cath_off * cath_angle.sin(),
    );

    // Wall texture phases.
    let phase1 = rng.random_range(0.0..2.0 * PI);
    let phase2 = rng.random_range(0.0..2.0 * PI);

    // Strut placement: minimum-gap construction on the circle, so the
    // separation invariant holds without rejection sampling.
    let k = rng.random_range(config.strut_count_range.0..=config.strut_count_range.1);
    let dtheta = config.min_angular_gap(lumen_r);
    if k as f64 * dtheta > 2.0 * PI {
        return Err(Error::config(format!(
            "{} struts cannot fit on a lumen of radius {:.1} at {}px minimum separation",
            k,
            lumen_r,
            config.min_strut_separation()
        )));
    }
    let rotation = rng.random_range(0.0..2.0 * PI);
    let slack = 2.0 * PI - k as f64 * dtheta;
    let mut fractions: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
    fractions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut struts = Vec::with_capacity(k);
    for (i, frac) in fractions.iter().enumerate() {
        let angle = rotation + i as f64 * dtheta + slack * frac;
        let buried = rng.random_range(0.0..1.0) < config.intima_coverage_prob;
        let (radius, amp) = if buried {
            (
                lumen_r + wall_t * rng.random_range(0.25..0.6),
                rng.random_range(0.30..0.50),
            )
        } else {
            (
                lumen_r + rng.random_range(-1.5..1.5),
                rng.random_range(0.85..1.0),
            )
        };
        struts.push(Strut {
            x: cx + radius * angle.cos(),
            y: cy + radius * angle.sin(),
            radius,
            angle,
            amp,
            buried,
        });
    }

    // Distractors: bright clumps deeper in the wall, no shadow, kept clear
    // of ground-truth struts so labels stay unambiguous.
    let n_distract = rng.random_range(config.distractor_count_range.0..=config.distractor_count_range.1);
    let mut distractors: Vec<(f64, f64, f64, f64)> = Vec::new(); // x, y, sigma, amp
    let max_dr = (lumen_r + 0.9 * wall_t).min(half - 4.0);
    for _ in 0..n_distract {
        for _attempt in 0..40 {
            let radius = rng.random_range(lumen_r + 4.0..max_dr.max(lumen_r + 5.0));
            let angle = rng.random_range(0.0..2.0 * PI);
            let x = cx + radius * angle.cos();
            let y = cy + radius * angle.sin();
            if x < 3.0 || y < 3.0 || x > size as f64 - 4.0 || y > size as f64 - 4.0 {
                continue;
            }
            let clear = struts
                .iter()
                .all(|s| (s.x - x).hypot(s.y - y) >= 8.0)
                && distractors
                    .iter()
                    .all(|d| (d.0 - x).hypot(d.1 - y) >= 8.0);
            if clear {
                let sigma = config.strut_bloom_sigma * rng.random_range(0.65..0.95);
                let amp = config.distractor_strength * rng.random_range(0.7..1.2);
                distractors.push((x, y, sigma, amp));
                break;
            }
        }
    }

    // Paint the scene.
    let sigma = config.strut_bloom_sigma;
    let wall_decay = 0.9 * wall_t;
    let mut grid = Grid::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            let px = x as f64;
            let py = y as f64;
            let dx = px - cx;
            let dy = py - cy;
            let d = dx.hypot(dy);
            let theta = dy.atan2(dx);

            // wall with soft lumen boundary and angular texture
            let edge = 1.0 / (1.0 + (-(d - lumen_r) / 0.8).exp());
            let modulation =
                1.0 + 0.18 * (3.0 * theta + phase1).sin() + 0.12 * (7.0 * theta + phase2).sin();
            let wall = 0.55 * (-(d - lumen_r).max(0.0) / wall_decay).exp() * modulation;
            let mut v = 0.02 + edge * wall.max(0.0);

            // catheter sheath: bright thin ring plus a faint core
            let dc = (px - cath_x).hypot(py - cath_y);
            let ring = 0.50 * (-((dc - config.catheter_ring_radius).powi(2)) / (2.0 * 1.3 * 1.3)).exp();
            let core = if dc < 2.5 { 0.25 } else { 0.0 };
            v += ring + core;

            // strut shadows: radial attenuation from just behind the strut
            // out to the image edge
            for s in &struts {
                if d <= s.radius + sigma {
                    continue;
                }
                let mut da = (theta - s.angle).abs() % (2.0 * PI);
                if da > PI {
                    da = 2.0 * PI - da;
                }
                let halfwidth = (1.8 * sigma).max(3.0) / d.max(1.0);
                if da < halfwidth {
                    let ang = 0.5 * (1.0 + (PI * da / halfwidth).cos()); // 1 at center, 0 at edge
                    let ramp = ((d - (s.radius + sigma)) / (2.0 * sigma)).clamp(0.0, 1.0);
                    let depth = if s.buried { 0.6 } else { 1.0 };
                    v *= 1.0 - config.shadow_depth * depth * ang * ramp;
                }
            }

            // strut blooms
            for s in &struts {
                let dd = (px - s.x).powi(2) + (py - s.y).powi(2);
                if dd < (6.0 * sigma) * (6.0 * sigma) {
                    v += s.amp * (-dd / (2.0 * sigma * sigma)).exp();
                }
            }

            // distractor clumps
            for &(dx_, dy_, ds, damp) in &distractors {
                let dd = (px - dx_).powi(2) + (py - dy_).powi(2);
                if dd < (6.0 * ds) * (6.0 * ds) {
                    v += damp * (-dd / (2.0 * ds * ds)).exp();
                }
            }

            grid.set(y, x, v);
        }
    }

    // Multiplicative speckle, clipped back to [0,1].
    if config.speckle_strength > 0.0 {
        let normal = Normal::new(0.0, 1.0).unwrap();
        for v in grid.data_mut() {
            let n: f64 = normal.sample(&mut rng);
            *v = (*v * (1.0 + config.speckle_strength * n)).clamp(0.0, 1.0);
        }
    } else {
        for v in grid.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }

    // Maximum normalization, then snap to the 16-bit grid so file round
    // trips are exact.
    let max = grid.max_value();
    if max > 0.0 {
        for v in grid.data_mut() {
            *v /= max;
        }
    }
    for v in grid.data_mut() {
        *v = (*v * 65535.0).round() / 65535.0;
    }

    let image = OctImage::new(grid, Provenance::Synthetic)?;
    let points = StrutPointSet::new(struts.iter().map(|s| Point::new(s.x, s.y)).collect());
    points.check_in_bounds(size, size)?;
    Ok((image, points))
}

/// Render point annotations into a training target: a disk of value 1.0 of
/// the given radius around every point (the morphological dilation of the
/// point set), zero elsewhere. Overlapping disks union rather than sum.
pub fn render_mask(
    points: &StrutPointSet,
    dims: (usize, usize),
    footprint_radius: f64,
) -> Result<HeatMap> {
    let (h, w) = dims;
    if footprint_radius < 1.0 {
        return Err(Error::config(format!(
            "footprint_radius {} must be at least 1",
            footprint_radius
        )));
    }
    for p in &points.points {
        if p.x < 0.0 || p.y < 0.0 || p.x > (w - 1) as f64 || p.y > (h - 1) as f64 {
            return Err(Error::config(format!(
                "annotation point ({}, {}) lies outside {}x{} mask dims",
                p.x, p.y, h, w
            )));
        }
    }
    let mut grid = Grid::zeros(h, w);
    let r2 = footprint_radius * footprint_radius;
    for p in &points.points {
        let y_lo = ((p.y - footprint_radius).floor().max(0.0)) as usize;
        let y_hi = ((p.y + footprint_radius).ceil().min((h - 1) as f64)) as usize;
        let x_lo = ((p.x - footprint_radius).floor().max(0.0)) as usize;
        let x_hi = ((p.x + footprint_radius).ceil().min((w - 1) as f64)) as usize;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let dd = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
                if dd <= r2 {
                    grid.set(y, x, 1.0);
                }
            }
        }
    }
    HeatMap::target(grid)
}

//! Shared domain types: 2-D intensity grids, point sets, images and heatmaps.
//!
//! Everything downstream (phantom generation, the networks, point
//! extraction, scoring) works on these. Coordinates follow image
//! conventions: `x` is the column, `y` is the row, both growing
//! rightwards/downwards, with sub-pixel precision allowed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major grid of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Grid {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width, "grid data length mismatch");
        Grid {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Grid {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Copy the `height×width` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Grid {
        assert!(y0 + height <= self.height && x0 + width <= self.width);
        let mut out = Grid::zeros(height, width);
        for y in 0..height {
            let src = &self.data[(y0 + y) * self.width + x0..(y0 + y) * self.width + x0 + width];
            out.data[y * width..(y + 1) * width].copy_from_slice(src);
        }
        out
    }

    /// View as a single-channel `[1,h,w]` tensor.
    pub fn to_tensor(&self) -> crate::nn::Tensor {
        crate::nn::Tensor::from_vec(&[1, self.height, self.width], self.data.clone())
    }

    /// Rebuild from a single-channel `[1,h,w]` tensor.
    pub fn from_tensor(t: &crate::nn::Tensor) -> Grid {
        let (c, h, w) = t.chw();
        assert_eq!(c, 1, "expected a single-channel tensor");
        Grid::from_vec(h, w, t.data().to_vec())
    }
}

/// A single strut location with sub-pixel precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Ground-truth or predicted strut coordinates for one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StrutPointSet {
    pub points: Vec<Point>,
}

impl StrutPointSet {
    pub fn new(points: Vec<Point>) -> Self {
        StrutPointSet { points }
    }

    pub fn empty() -> Self {
        StrutPointSet { points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// All points strictly inside an `height×width` pixel grid.
    pub fn check_in_bounds(&self, height: usize, width: usize) -> Result<()> {
        for p in &self.points {
            if p.x < 0.0 || p.y < 0.0 || p.x > (width - 1) as f64 || p.y > (height - 1) as f64 {
                return Err(Error::config(format!(
                    "point ({}, {}) lies outside {}x{} image bounds",
                    p.x, p.y, height, width
                )));
            }
        }
        Ok(())
    }
}

/// Where an image came from. Synthetic images carry exact ground truth;
/// external ones are whatever the user pointed the tool at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic,
    External,
}

/// Normalized grayscale cross-sectional image.
///
/// Invariants: all intensities in `[0,1]` (maximum normalization), and both
/// dimensions divisible by 16 so the four pooling stages of the global
/// network divide evenly.
#[derive(Debug, Clone, PartialEq)]
pub struct OctImage {
    pub grid: Grid,
    pub provenance: Provenance,
}

impl OctImage {
    pub fn new(grid: Grid, provenance: Provenance) -> Result<Self> {
        if grid.height() % 16 != 0 || grid.width() % 16 != 0 {
            return Err(Error::config(format!(
                "image dims {}x{} must each be divisible by 16; pad or crop the image",
                grid.height(),
                grid.width()
            )));
        }
        if grid.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config(
                "image intensities must lie in [0,1]; apply maximum normalization first",
            ));
        }
        Ok(OctImage { grid, provenance })
    }

    /// Build from raw non-negative intensities, applying maximum
    /// normalization (divide by the max so the brightest pixel is 1).
    pub fn from_raw(mut grid: Grid, provenance: Provenance) -> Result<Self> {
        let max = grid.max_value();
        if grid.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config(
                "raw image intensities must be finite and non-negative",
            ));
        }
        if max > 0.0 {
            grid.data_mut().iter_mut().for_each(|v| *v /= max);
        }
        OctImage::new(grid, provenance)
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }
}

/// Whether a heatmap is a training target or a network prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeatMapRole {
    Target,
    Prediction,
}

/// Per-pixel strut-likelihood grid.
///
/// Target heatmaps hold values in `[0,1]` and are exactly zero outside the
/// dilated strut footprints. Prediction heatmaps are raw network output and
/// may slightly leave `[0,1]`; they are clamped at point-extraction time.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub grid: Grid,
    pub role: HeatMapRole,
}

impl HeatMap {
    pub fn target(grid: Grid) -> Result<Self> {
        if grid.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config("target heatmap values must lie in [0,1]"));
        }
        Ok(HeatMap {
            grid,
            role: HeatMapRole::Target,
        })
    }

    pub fn prediction(grid: Grid) -> Self {
        HeatMap {
            grid,
            role: HeatMapRole::Prediction,
        }
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }
}

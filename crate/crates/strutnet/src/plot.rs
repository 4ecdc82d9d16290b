//! Static overlay renderings: ground truth as circles, predictions as
//! crosses, matched pairs joined by a line. Written as RGB PNGs next to the
//! evaluation outputs for visual inspection.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::eval::MatchResult;
use crate::fsio::atomic_write;
use crate::types::{Grid, StrutPointSet};

const GT_COLOR: Rgb<u8> = Rgb([60, 220, 60]);
const PRED_COLOR: Rgb<u8> = Rgb([235, 64, 52]);
const MATCH_COLOR: Rgb<u8> = Rgb([250, 210, 60]);

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_circle(img: &mut RgbImage, cx: f64, cy: f64, radius: f64, color: Rgb<u8>) {
    let steps = (radius * 16.0).max(24.0) as usize;
    for k in 0..steps {
        let a = 2.0 * std::f64::consts::PI * k as f64 / steps as f64;
        put(
            img,
            (cx + radius * a.cos()).round() as i64,
            (cy + radius * a.sin()).round() as i64,
            color,
        );
    }
}

fn draw_cross(img: &mut RgbImage, cx: f64, cy: f64, arm: i64, color: Rgb<u8>) {
    let (x, y) = (cx.round() as i64, cy.round() as i64);
    for d in -arm..=arm {
        put(img, x + d, y, color);
        put(img, x, y + d, color);
    }
}

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let n = ((x1 - x0).hypot(y1 - y0).ceil() as usize).max(1);
    for k in 0..=n {
        let t = k as f64 / n as f64;
        put(
            img,
            (x0 + t * (x1 - x0)).round() as i64,
            (y0 + t * (y1 - y0)).round() as i64,
            color,
        );
    }
}

/// Compose an overlay: the grayscale image with ground-truth circles,
/// prediction crosses, and a connecting line per matched pair.
pub fn render_overlay(
    image: &Grid,
    gt: &StrutPointSet,
    pred: &StrutPointSet,
    matches: Option<&MatchResult>,
) -> RgbImage {
    let (h, w) = (image.height() as u32, image.width() as u32);
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = (image.get(y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x, y, Rgb([v, v, v]));
        }
    }
    if let Some(m) = matches {
        for &(pi, gi, _) in &m.pairs {
            let p = &pred.points[pi];
            let g = &gt.points[gi];
            draw_line(&mut img, p.x, p.y, g.x, g.y, MATCH_COLOR);
        }
    }
    for g in &gt.points {
        draw_circle(&mut img, g.x, g.y, 6.0, GT_COLOR);
    }
    for p in &pred.points {
        draw_cross(&mut img, p.x, p.y, 4, PRED_COLOR);
    }
    img
}

pub fn save_overlay(
    path: &Path,
    image: &Grid,
    gt: &StrutPointSet,
    pred: &StrutPointSet,
    matches: Option<&MatchResult>,
) -> Result<()> {
    let img = render_overlay(image, gt, pred, matches);
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Numeric(format!("overlay encode failed: {}", e)))?;
    atomic_write(path, &bytes)
}

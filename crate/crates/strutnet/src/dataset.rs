//! On-disk dataset layout and round-trip I/O.
//!
//! A dataset directory holds:
//!
//! ```text
//! <dir>/images/00000.png    16-bit grayscale, lossless
//! <dir>/points/00000.csv    header "x,y", one sub-pixel point per row
//! <dir>/manifest.txt        generator config for provenance
//! ```
//!
//! Images round-trip bit-exactly (intensities live on the 16-bit grid by
//! construction) and point coordinates round-trip exactly through their
//! shortest decimal representation.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::synth::SynthConfig;
use crate::types::{Grid, OctImage, Point, Provenance, StrutPointSet};

/// One image with its annotation, identified by a zero-padded id that links
/// image, points and prediction files.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: OctImage,
    pub points: StrutPointSet,
}

pub fn sample_id(index: u64) -> String {
    format!("{:05}", index)
}

fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("images").join(format!("{}.png", id))
}

fn points_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("points").join(format!("{}.csv", id))
}

/// Encode a `[0,1]` grid as 16-bit grayscale PNG bytes.
fn encode_png(grid: &Grid) -> Result<Vec<u8>> {
    let (h, w) = (grid.height(), grid.width());
    let pixels: Vec<u16> = grid
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, pixels).expect("pixel buffer size");
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| Error::Numeric(format!("png encode failed: {}", e)))?;
    Ok(bytes)
}

fn decode_png(path: &Path) -> Result<Grid> {
    let img = image::open(path).map_err(|e| Error::data(path, format!("cannot read image: {}", e)))?;
    let (grid, _depth) = match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let data: Vec<f64> = buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            (Grid::from_vec(h, w, data), 16)
        }
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let data: Vec<f64> = buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
            (Grid::from_vec(h, w, data), 8)
        }
        other => {
            let buf = other.into_luma16();
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let data: Vec<f64> = buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            (Grid::from_vec(h, w, data), 16)
        }
    };
    Ok(grid)
}

/// Serialize a point set as CSV with an `x,y` header. `{}` formatting of
/// f64 emits the shortest representation that parses back to the same
/// value, which is what makes the round trip exact.
pub fn points_to_csv(points: &StrutPointSet) -> String {
    let mut out = String::from("x,y\n");
    for p in &points.points {
        out.push_str(&format!("{},{}\n", p.x, p.y));
    }
    out
}

/// Parse a points CSV. `columns` names the expected header prefix; extra
/// columns (like detection scores) are tolerated.
pub fn points_from_csv(path: &Path, text: &str) -> Result<StrutPointSet> {
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if lineno == 0 {
            let hdr: Vec<&str> = line.split(',').map(str::trim).collect();
            if hdr.len() < 2 || hdr[0] != "x" || hdr[1] != "y" {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    msg: format!("expected header starting with 'x,y', got '{}'", line),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected at least 2 comma-separated fields, got '{}'", line),
            });
        }
        let x: f64 = fields[0].trim().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("non-numeric x field '{}'", fields[0]),
        })?;
        let y: f64 = fields[1].trim().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("non-numeric y field '{}'", fields[1]),
        })?;
        points.push(Point::new(x, y));
    }
    Ok(StrutPointSet::new(points))
}

/// Write a `[0,1]` grid as a standalone 16-bit grayscale PNG (heatmap
/// dumps, debugging).
pub fn write_grid_png(path: &Path, grid: &Grid) -> Result<()> {
    atomic_write(path, &encode_png(grid)?)
}

/// Write samples (and optionally the generator config) into `dir`.
pub fn write_dataset(samples: &[Sample], dir: &Path, manifest: Option<&SynthConfig>) -> Result<()> {
    for sample in samples {
        atomic_write(&image_path(dir, &sample.id), &encode_png(&sample.image.grid)?)?;
        atomic_write(
            &points_path(dir, &sample.id),
            points_to_csv(&sample.points).as_bytes(),
        )?;
    }
    if let Some(cfg) = manifest {
        let text = toml::to_string(cfg)
            .map_err(|e| Error::Config(format!("manifest serialization failed: {}", e)))?;
        atomic_write(&dir.join("manifest.txt"), text.as_bytes())?;
    }
    Ok(())
}

/// Read a dataset directory back. An empty or missing `images/` directory
/// yields an empty dataset; a missing points file yields an empty point
/// set for that image (useful for unlabeled inference inputs).
pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let images = dir.join("images");
    let mut ids: Vec<String> = match fs::read_dir(&images) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                if p.extension().is_some_and(|x| x == "png") {
                    p.file_stem().map(|s| s.to_string_lossy().into_owned())
                } else {
                    None
                }
            })
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(&images, e)),
    };
    ids.sort();

    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let ipath = image_path(dir, &id);
        let grid = decode_png(&ipath)?;
        let image = OctImage::from_raw(grid, Provenance::Synthetic).map_err(|e| {
            Error::data(&ipath, format!("image violates invariants: {}", e))
        })?;
        let ppath = points_path(dir, &id);
        let points = match fs::read_to_string(&ppath) {
            Ok(text) => points_from_csv(&ppath, &text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => StrutPointSet::empty(),
            Err(e) => return Err(Error::io(&ppath, e)),
        };
        samples.push(Sample { id, image, points });
    }
    Ok(samples)
}

/// Generator config recorded alongside a synthetic dataset, if present.
pub fn read_manifest(dir: &Path) -> Result<Option<SynthConfig>> {
    let path = dir.join("manifest.txt");
    match fs::read_to_string(&path) {
        Ok(text) => {
            let cfg = toml::from_str(&text).map_err(|e| Error::Parse {
                path,
                line: 1,
                msg: format!("bad manifest: {}", e),
            })?;
            Ok(Some(cfg))
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(&path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sample, SynthConfig};

    fn small_config() -> SynthConfig {
        SynthConfig {
            image_size: 96,
            lumen_radius_range: (20.0, 27.0),
            wall_thickness_range: (8.0, 13.0),
            strut_count_range: (5, 9),
            strut_bloom_sigma: 2.2,
            catheter_ring_radius: 7.0,
            distractor_count_range: (1, 4),
            rng_seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<Sample> = (0..3)
            .map(|i| {
                let (image, points) = generate_sample(&cfg, i).unwrap();
                Sample {
                    id: sample_id(i),
                    image,
                    points,
                }
            })
            .collect();
        write_dataset(&samples, dir.path(), Some(&cfg)).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(samples, back);
        assert_eq!(read_manifest(dir.path()).unwrap(), Some(cfg));
    }

    #[test]
    fn empty_directory_reads_as_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(read_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn corrupt_points_file_reports_path_and_line() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let (image, points) = generate_sample(&cfg, 0).unwrap();
        let sample = Sample {
            id: sample_id(0),
            image,
            points,
        };
        write_dataset(&[sample], dir.path(), None).unwrap();
        let ppath = dir.path().join("points").join("00000.csv");
        std::fs::write(&ppath, "x,y\n12.5,oops\n").unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("00000.csv"), "{}", msg);
        assert!(msg.contains(":2:"), "{}", msg);
        assert!(msg.contains("oops"), "{}", msg);
    }

    #[test]
    fn header_only_file_parses_to_empty_set() {
        let pts = points_from_csv(Path::new("t.csv"), "x,y\n").unwrap();
        assert!(pts.is_empty());
    }
}

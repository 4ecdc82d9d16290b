//! Subcommand implementations.

use std::path::Path;

use rayon::prelude::*;

use strutnet::checkpoint;
use strutnet::config::RunConfig;
use strutnet::dataset::{read_dataset, sample_id, write_dataset, write_grid_png, Sample};
use strutnet::error::{Error, Result};
use strutnet::eval::{compute_metrics, ingest_external, match_points, MatchResult, MetricsReport};
use strutnet::fsio::atomic_write_str;
use strutnet::globalnet::GlobalNet;
use strutnet::localnet::LocalNet;
use strutnet::pipeline::{detect, detections_to_csv, DetectConfig, DetectionMode, TileGrid};
use strutnet::plot::save_overlay;
use strutnet::synth::generate_sample;
use strutnet::training::{train_global, train_local_with_spec, GlobalInput, GlobalTrainSpecs};

use crate::{Command, ConfigOpts, ModeArg};

pub fn run(command: Command, verbose: u8) -> Result<()> {
    match command {
        Command::Synth {
            config,
            out,
            count,
            start_index,
            seed,
        } => synth(&config, &out, count, start_index, seed, verbose),
        Command::TrainLocal {
            config,
            data,
            val_data,
            out,
            epochs,
            seed,
        } => run_train_local(&config, &data, val_data.as_deref(), &out, epochs, seed),
        Command::TrainGlobal {
            config,
            data,
            val_data,
            local_ckpt,
            out,
            zero_local,
            epochs,
            seed,
        } => run_train_global(
            &config,
            &data,
            val_data.as_deref(),
            &local_ckpt,
            &out,
            zero_local,
            epochs,
            seed,
        ),
        Command::Infer {
            config,
            data,
            local_ckpt,
            global_ckpt,
            out,
            mode,
            full_image,
            dump_heatmaps,
            refine_passes,
            threshold,
        } => infer(
            &config,
            &data,
            local_ckpt.as_deref(),
            global_ckpt.as_deref(),
            &out,
            mode,
            full_image,
            dump_heatmaps,
            refine_passes,
            threshold,
            verbose,
        ),
        Command::Eval {
            config,
            data,
            pred_dir,
            out,
            method,
            tolerance,
        } => eval(&config, &data, &pred_dir, out.as_deref(), method, tolerance),
        Command::Ablate {
            config,
            data,
            local_ckpt,
            global_ckpt,
            global_only_ckpt,
            out,
            full_image,
        } => ablate(
            &config,
            &data,
            &local_ckpt,
            &global_ckpt,
            &global_only_ckpt,
            &out,
            full_image,
        ),
        Command::Plot {
            config,
            data,
            pred_dir,
            out,
            limit,
        } => plot(&config, &data, &pred_dir, &out, limit),
    }
}

fn load_nonempty(dir: &Path) -> Result<Vec<Sample>> {
    let samples = read_dataset(dir)?;
    if samples.is_empty() {
        return Err(Error::data(dir, "dataset directory contains no images"));
    }
    Ok(samples)
}

/// Whole-image local passes are cheaper than tiling for small frames;
/// above this side length the tiled route bounds memory.
fn auto_tiles(cfg: &RunConfig, samples: &[Sample], full_image: bool) -> Option<TileGrid> {
    if full_image {
        return None;
    }
    let max_dim = samples
        .iter()
        .map(|s| s.image.height().max(s.image.width()))
        .max()
        .unwrap_or(0);
    (max_dim > 192).then(|| cfg.tile_grid())
}

fn synth(
    opts: &ConfigOpts,
    out: &Path,
    count: u64,
    start_index: u64,
    seed: Option<u64>,
    verbose: u8,
) -> Result<()> {
    let cfg = opts.load(&[("rng_seed", seed.map(|s| s.to_string()))])?;
    let synth_cfg = cfg.synth();
    synth_cfg.validate()?;
    let samples: Vec<Sample> = (start_index..start_index + count)
        .into_par_iter()
        .map(|i| {
            let (image, points) = generate_sample(&synth_cfg, i)?;
            Ok(Sample {
                id: sample_id(i),
                image,
                points,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_dataset(&samples, out, Some(&synth_cfg))?;
    if verbose > 0 {
        for s in &samples {
            eprintln!("wrote {} ({} struts)", s.id, s.points.len());
        }
    }
    println!(
        "synth: {} samples ({}x{}) -> {}",
        count,
        synth_cfg.image_size,
        synth_cfg.image_size,
        out.display()
    );
    Ok(())
}

fn run_train_local(
    opts: &ConfigOpts,
    data: &Path,
    val_data: Option<&Path>,
    out: &Path,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = opts.load(&[
        ("epochs", epochs.map(|e| e.to_string())),
        ("seed", seed.map(|s| s.to_string())),
    ])?;
    let dataset = load_nonempty(data)?;
    let val = val_data.map(load_nonempty).transpose()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (_, rows) =
        train_local_with_spec(&dataset, val.as_deref(), &cfg.train(), cfg.local_spec(), Some(out))?;
    let final_loss = rows
        .iter()
        .rev()
        .find(|r| r.split == "train")
        .map(|r| r.value)
        .unwrap_or(f64::NAN);
    println!(
        "train-local: {} epochs on {} images, final loss {:.6} -> {}",
        cfg.epochs,
        dataset.len(),
        final_loss,
        out.join("local.ckpt").display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_train_global(
    opts: &ConfigOpts,
    data: &Path,
    val_data: Option<&Path>,
    local_ckpt: &Path,
    out: &Path,
    zero_local: bool,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = opts.load(&[
        ("epochs", epochs.map(|e| e.to_string())),
        ("seed", seed.map(|s| s.to_string())),
    ])?;
    let dataset = load_nonempty(data)?;
    let val = val_data.map(load_nonempty).transpose()?;
    let (local, _) = checkpoint::load_local(local_ckpt)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mode = if zero_local {
        GlobalInput::Zero
    } else {
        GlobalInput::LocalMap
    };
    let specs = GlobalTrainSpecs {
        global: cfg.global_spec(),
        attention: cfg.attention_spec(),
    };
    let tiles = auto_tiles(&cfg, &dataset, false);
    let (_, _, rows) = train_global(
        &dataset,
        val.as_deref(),
        &local,
        &cfg.train(),
        specs,
        mode,
        tiles.as_ref(),
        Some(out),
    )?;
    let final_loss = rows
        .iter()
        .rev()
        .find(|r| r.split == "train" && r.name == "total")
        .map(|r| r.value)
        .unwrap_or(f64::NAN);
    let name = if zero_local { "global_only.ckpt" } else { "global.ckpt" };
    println!(
        "train-global: {} epochs on {} images, final loss {:.6} -> {}",
        cfg.epochs,
        dataset.len(),
        final_loss,
        out.join(name).display()
    );
    Ok(())
}

struct LoadedNets {
    local: Option<LocalNet>,
    global: Option<GlobalNet>,
}

fn load_nets(
    mode: DetectionMode,
    local_ckpt: Option<&Path>,
    global_ckpt: Option<&Path>,
) -> Result<LoadedNets> {
    let need_local = mode != DetectionMode::GlobalOnly;
    let need_global = mode != DetectionMode::LocalOnly;
    let local = match (need_local, local_ckpt) {
        (true, Some(p)) => Some(checkpoint::load_local(p)?.0),
        (true, None) => {
            return Err(Error::config(format!(
                "--local-ckpt is required for {} detection",
                mode
            )))
        }
        (false, _) => None,
    };
    let global = match (need_global, global_ckpt) {
        (true, Some(p)) => Some(checkpoint::load_global(p)?.0),
        (true, None) => {
            return Err(Error::config(format!(
                "--global-ckpt is required for {} detection",
                mode
            )))
        }
        (false, _) => None,
    };
    Ok(LoadedNets { local, global })
}

fn detect_dataset(
    samples: &[Sample],
    nets: &LoadedNets,
    cfg: &DetectConfig,
    mode: DetectionMode,
) -> Result<Vec<strutnet::pipeline::DetectionResult>> {
    samples
        .par_iter()
        .map(|s| detect(nets.local.as_ref(), nets.global.as_ref(), &s.image, cfg, mode))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn infer(
    opts: &ConfigOpts,
    data: &Path,
    local_ckpt: Option<&Path>,
    global_ckpt: Option<&Path>,
    out: &Path,
    mode: ModeArg,
    full_image: bool,
    dump_heatmaps: bool,
    refine_passes: Option<usize>,
    threshold: Option<f64>,
    verbose: u8,
) -> Result<()> {
    let cfg = opts.load(&[
        ("refine_passes", refine_passes.map(|r| r.to_string())),
        ("threshold", threshold.map(|t| t.to_string())),
    ])?;
    let mode: DetectionMode = mode.into();
    let samples = load_nonempty(data)?;
    let nets = load_nets(mode, local_ckpt, global_ckpt)?;
    let mut dcfg = cfg.detect_config(true);
    dcfg.tiles = auto_tiles(&cfg, &samples, full_image);
    let results = detect_dataset(&samples, &nets, &dcfg, mode)?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut total_points = 0usize;
    for (s, r) in samples.iter().zip(results.iter()) {
        atomic_write_str(
            &out.join(format!("{}.csv", s.id)),
            &detections_to_csv(&r.points, &r.scores),
        )?;
        if dump_heatmaps {
            let hm_dir = out.join("heatmaps");
            write_grid_png(&hm_dir.join(format!("{}_local.png", s.id)), &r.local_map.grid)?;
            if let Some(refined) = &r.refined_map {
                write_grid_png(&hm_dir.join(format!("{}_refined.png", s.id)), &refined.grid)?;
            }
        }
        if verbose > 0 {
            eprintln!(
                "{}: {} points (local {:.0} ms, global {:.0} ms, extract {:.1} ms)",
                s.id,
                r.points.len(),
                r.timing.local_ms,
                r.timing.global_ms,
                r.timing.extract_ms
            );
        }
        total_points += r.points.len();
    }
    println!(
        "infer[{}]: {} images, {} points -> {}",
        mode,
        samples.len(),
        total_points,
        out.display()
    );
    Ok(())
}

fn score_against(
    samples: &[Sample],
    predictions: &[strutnet::types::StrutPointSet],
    tolerance: f64,
) -> Result<Vec<(String, MatchResult)>> {
    samples
        .par_iter()
        .zip(predictions.par_iter())
        .map(|(s, p)| Ok((s.id.clone(), match_points(p, &s.points, tolerance)?)))
        .collect()
}

fn write_report(report: &MetricsReport, out: Option<&Path>) -> Result<()> {
    print!("{}", report.to_text());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        atomic_write_str(&dir.join("metrics.csv"), &report.to_csv())?;
        atomic_write_str(&dir.join("metrics.txt"), &report.to_text())?;
    }
    Ok(())
}

fn eval(
    opts: &ConfigOpts,
    data: &Path,
    pred_dir: &Path,
    out: Option<&Path>,
    method: Option<String>,
    tolerance: Option<f64>,
) -> Result<()> {
    let cfg = opts.load(&[("tolerance", tolerance.map(|t| t.to_string()))])?;
    let samples = load_nonempty(data)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let (predictions, warnings) = ingest_external(pred_dir, &ids)?;
    for w in &warnings {
        eprintln!("warning: {}", w);
    }
    let results = score_against(&samples, &predictions, cfg.tolerance)?;
    let method = method.unwrap_or_else(|| {
        pred_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "external".to_string())
    });
    let report = compute_metrics(&results, &method, &data.display().to_string(), cfg.tolerance)?;
    write_report(&report, out)
}

fn ablate(
    opts: &ConfigOpts,
    data: &Path,
    local_ckpt: &Path,
    global_ckpt: &Path,
    global_only_ckpt: &Path,
    out: &Path,
    full_image: bool,
) -> Result<()> {
    let cfg = opts.load(&[])?;
    let samples = load_nonempty(data)?;
    let (local, _) = checkpoint::load_local(local_ckpt)?;
    let (global, _, _) = checkpoint::load_global(global_ckpt)?;
    let (global_only, _, _) = checkpoint::load_global(global_only_ckpt)?;
    let mut dcfg = cfg.detect_config(true);
    dcfg.tiles = auto_tiles(&cfg, &samples, full_image);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut table_rows: Vec<(String, f64, f64)> = Vec::new();
    let variants: [(DetectionMode, Option<&LocalNet>, Option<&GlobalNet>); 3] = [
        (DetectionMode::LocalOnly, Some(&local), None),
        (DetectionMode::GlobalOnly, None, Some(&global_only)),
        (DetectionMode::Combined, Some(&local), Some(&global)),
    ];
    for (mode, l, g) in variants {
        let results: Vec<strutnet::pipeline::DetectionResult> = samples
            .par_iter()
            .map(|s| detect(l, g, &s.image, &dcfg, mode))
            .collect::<Result<Vec<_>>>()?;
        let mode_dir = out.join(mode.to_string());
        std::fs::create_dir_all(&mode_dir).map_err(|e| Error::io(&mode_dir, e))?;
        for (s, r) in samples.iter().zip(results.iter()) {
            atomic_write_str(
                &mode_dir.join(format!("{}.csv", s.id)),
                &detections_to_csv(&r.points, &r.scores),
            )?;
        }
        let matches: Vec<(String, MatchResult)> = samples
            .iter()
            .zip(results.iter())
            .map(|(s, r)| Ok((s.id.clone(), match_points(&r.points, &s.points, cfg.tolerance)?)))
            .collect::<Result<Vec<_>>>()?;
        let report = compute_metrics(
            &matches,
            &mode.to_string(),
            &data.display().to_string(),
            cfg.tolerance,
        )?;
        atomic_write_str(
            &out.join(format!("metrics_{}.csv", mode)),
            &report.to_csv(),
        )?;
        table_rows.push((mode.to_string(), report.recall, report.precision));
    }

    let mut csv = String::from("method,recall,precision\n");
    let mut text = format!("{:<14}{:>10}{:>12}\n", "method", "recall", "precision");
    for (m, r, p) in &table_rows {
        csv.push_str(&format!("{},{:.6},{:.6}\n", m, r, p));
        text.push_str(&format!("{:<14}{:>10.4}{:>12.4}\n", m, r, p));
    }
    atomic_write_str(&out.join("ablation.csv"), &csv)?;
    atomic_write_str(&out.join("ablation.txt"), &text)?;
    print!("{}", text);
    println!("ablate: wrote {}", out.join("ablation.csv").display());
    Ok(())
}

fn plot(
    opts: &ConfigOpts,
    data: &Path,
    pred_dir: &Path,
    out: &Path,
    limit: Option<usize>,
) -> Result<()> {
    let cfg = opts.load(&[])?;
    let mut samples = load_nonempty(data)?;
    if let Some(n) = limit {
        samples.truncate(n);
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let (predictions, warnings) = ingest_external(pred_dir, &ids)?;
    for w in &warnings {
        eprintln!("warning: {}", w);
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (s, pred) in samples.iter().zip(predictions.iter()) {
        let matches = match_points(pred, &s.points, cfg.tolerance)?;
        save_overlay(
            &out.join(format!("{}.png", s.id)),
            &s.image.grid,
            &s.points,
            pred,
            Some(&matches),
        )?;
    }
    println!("plot: {} overlays -> {}", samples.len(), out.display());
    Ok(())
}


use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use semmatch::correlation::{correlate, foreground_mask, FeatureMap, ForegroundMask};
use semmatch::evaluation::{
    evaluate_pairs, load_dataset, save_dataset, DescriptorSource, FeatureSource, KeypointPairRecord, SidecarSource,
};
use semmatch::features::{extract, load_features, DescriptorConfig, Image};
use semmatch::geometry::GeometricTransform;
use semmatch::losses::{LossConfig, LossWeights};
use semmatch::pipeline::synth::warp_image;
use semmatch::pipeline::{
    generate_pair_with, train as run_training, SynthConfig, TrainConfig, TrainPair, TrainSet, WarpFamily, DEFAULT_LR,
};
use semmatch::regressor::{init_weights, predict, RegressorConfig, RegressorWeights, DEFAULT_POOL};

use crate::config::Resolver;
use crate::overlay::{lattice_links, render_svg, Link};
use crate::values::{BoxSideArg, FeatureKind, Resize, SampleArg, StageArg, Taus};
use crate::{CliError, DescriptorArgs, EvalArgs, MasksArgs, MatchArgs, ModelArgs, SynthArgs, TrainArgs, WarpArgs};

type Result<T> = std::result::Result<T, CliError>;

/// Lattice side of the match overlay.
const OVERLAY_SIDE: usize = 10;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Lib(semmatch::Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Must run after the last value is resolved and before any work starts.
fn announce(r: &Resolver) {
    eprint!("{}", r.render());
}

fn descriptor(r: &mut Resolver, a: DescriptorArgs) -> Result<(DescriptorConfig, bool)> {
    let d = DescriptorConfig::default();
    let cfg = DescriptorConfig {
        cell_size: r.value("cell_size", a.cell_size, d.cell_size)?,
        orientation_bins: r.value("orientation_bins", a.orientation_bins, d.orientation_bins)?,
        resize: r.value("resize", a.resize, Resize(d.resize))?.0,
    };
    let dsmf = r.value("features", a.features, FeatureKind(false))?.0;
    Ok((cfg, dsmf))
}

fn image_features(path: &Path, cfg: &DescriptorConfig, dsmf: bool) -> Result<FeatureMap> {
    if dsmf {
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".dsmf");
        return Ok(load_features(Path::new(&sidecar))?);
    }
    Ok(extract(&Image::load(path)?, cfg)?)
}

fn model(r: &mut Resolver, a: ModelArgs, grid: semmatch::geometry::GridShape) -> Result<RegressorConfig> {
    let d = RegressorConfig::new(grid);
    Ok(RegressorConfig {
        grid,
        hidden: r.value("hidden", a.hidden, d.hidden)?,
        pool: r.value("pool", a.pool, DEFAULT_POOL)?.min(grid.h).min(grid.w).max(1),
    })
}

/// Saved checkpoint, or the identity regressor sized for `grid`.
fn weights_or_identity(
    path: Option<&PathBuf>,
    seed: u64,
    grid: semmatch::geometry::GridShape,
) -> Result<RegressorWeights> {
    match path {
        Some(p) => Ok(RegressorWeights::load(p)?),
        None => Ok(init_weights(seed, RegressorConfig::new(grid))?),
    }
}

pub fn synth(r: &mut Resolver, a: SynthArgs, seed: u64) -> Result<()> {
    let count: usize = r.value("count", a.count, 10)?;
    let family: WarpFamily = r.value("family", a.family, WarpFamily::Affine)?;
    let magnitude: f64 = r.value("magnitude", a.magnitude, 0.25)?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        size: r.value("size", a.size, d.size)?,
        keypoints: r.value("keypoints", a.keypoints, d.keypoints)?,
        flip: r.value("flip", a.flip, d.flip)?,
        crop: r.value("crop", a.crop, d.crop)?,
    };
    let out = r.path("out", a.out)?;
    announce(r);

    create_dir(&out)?;
    let mut records = Vec::with_capacity(count);
    let mut manifest = String::new();
    for k in 0..count {
        let pair = generate_pair_with(seed.wrapping_add(k as u64), family, magnitude, &cfg)?;
        let (src, dst, gt) = (
            format!("pair_{k:04}_a.ppm"),
            format!("pair_{k:04}_b.ppm"),
            format!("pair_{k:04}.gt"),
        );
        pair.base.save_ppm(&out.join(&src))?;
        pair.warped.save_ppm(&out.join(&dst))?;
        pair.gt_transform.save(&out.join(&gt))?;
        manifest.push_str(&format!("{src}\t{dst}\t{gt}\n"));
        records.push(KeypointPairRecord {
            source: src,
            target: dst,
            class: "synthetic".into(),
            source_box: pair.object_box(false),
            target_box: pair.object_box(true),
            keypoints: pair.keypoints.iter().map(|k| (k.source, k.target)).collect(),
        });
    }
    save_dataset(&records, &out.join("pairs.tsv"))?;
    write(&out.join("manifest.tsv"), manifest)?;
    println!("wrote {count} pairs to {}", out.display());
    Ok(())
}

/// Pairs listed in `manifest.tsv` (with ground truth) or else `pairs.tsv`.
fn load_train_dir(dir: &Path, cfg: &DescriptorConfig, dsmf: bool) -> Result<TrainSet> {
    let manifest = dir.join("manifest.tsv");
    let entries: Vec<(String, String, Option<GeometricTransform>)> = if manifest.exists() {
        let text = fs::read_to_string(&manifest).map_err(|e| io_err(&manifest, e))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let f: Vec<&str> = l.split('\t').collect();
                if f.len() != 3 {
                    return Err(CliError::Lib(semmatch::Error::Format {
                        path: manifest.clone(),
                        source: semmatch::FormatError::Text {
                            line: i + 1,
                            detail: "expected image, image, transform".into(),
                        },
                    }));
                }
                Ok((
                    f[0].to_owned(),
                    f[1].to_owned(),
                    Some(GeometricTransform::load(&dir.join(f[2]))?),
                ))
            })
            .collect::<Result<_>>()?
    } else {
        load_dataset(&dir.join("pairs.tsv"))?
            .into_iter()
            .map(|rec| (rec.source, rec.target, None))
            .collect()
    };
    let mut set = TrainSet::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut slot = |id: &str, set: &mut TrainSet| -> Result<usize> {
        if let Some(&k) = index.get(id) {
            return Ok(k);
        }
        set.features.push(image_features(&dir.join(id), cfg, dsmf)?);
        index.insert(id.to_owned(), set.features.len() - 1);
        Ok(set.features.len() - 1)
    };
    for (src, dst, gt) in entries {
        let a = slot(&src, &mut set)?;
        let b = slot(&dst, &mut set)?;
        set.pairs.push(TrainPair { a, b, gt, group: None });
    }
    Ok(set)
}

pub fn train(r: &mut Resolver, a: TrainArgs, seed: u64) -> Result<()> {
    let data = r.optional_path("data", a.data)?;
    let (desc, dsmf) = descriptor(r, a.descriptor)?;
    let synth = if data.is_none() {
        let d = SynthConfig::default();
        let scenes: usize = r.value("pairs", a.pairs, 50)?;
        let members: usize = r.value("members", a.members, 1)?;
        let family: WarpFamily = r.value("family", a.family, WarpFamily::Affine)?;
        let magnitude: f64 = r.value("magnitude", a.magnitude, 0.25)?;
        let cfg = SynthConfig {
            size: r.value("size", a.size, d.size)?,
            flip: r.value("flip", a.flip, d.flip)?,
            crop: r.value("crop", a.crop, d.crop)?,
            ..d
        };
        Some((scenes, members, family, magnitude, cfg))
    } else {
        None
    };
    let d = TrainConfig::default();
    let l = LossConfig::default();
    let mut cfg = TrainConfig {
        batch_size: r.value("batch_size", a.batch_size, d.batch_size)?,
        epochs: r.value("epochs", a.epochs, d.epochs)?,
        seed,
        weights: LossWeights::default(),
        loss: LossConfig {
            phi: r.value("phi", a.phi, l.phi)?,
            detach_masks: r.value("detach_masks", a.detach_masks, l.detach_masks)?,
            foreground_guided: r.value("foreground_guided", a.foreground_guided, l.foreground_guided)?,
            cycle_stage: r.value("cycle_stage", a.cycle_stage, StageArg(l.cycle_stage))?.0,
            sample: r.value("cycle_sample", a.cycle_sample, SampleArg(l.sample))?.0,
            sample_count: r.value("sample_count", a.sample_count, l.sample_count)?,
        },
        warmup_steps: r.value("warmup_steps", a.warmup_steps, d.warmup_steps)?,
        lr: r.value("lr", a.lr, DEFAULT_LR)?,
        warmup_lr: r.value("warmup_lr", a.warmup_lr, DEFAULT_LR)?,
        swap: r.value("swap", a.swap, d.swap)?,
        ..d
    };
    let (lc, lt) = (
        r.value("lambda_c", a.lambda_c, d.weights.lambda_c)?,
        r.value("lambda_t", a.lambda_t, d.weights.lambda_t)?,
    );
    cfg.weights = LossWeights::new(lc, lt)?;
    let out = r.path("out", a.out)?;
    let log = r.optional_path("log", a.log)?;
    // The grid is only known once features exist, so the model keys are
    // resolved from a probe image before the config is printed.
    let set = match (&data, synth) {
        (Some(dir), _) => load_train_dir(dir, &desc, dsmf)?,
        (None, Some((scenes, members, family, magnitude, synth))) => {
            cfg.flip = synth.flip > 0.0;
            cfg.crop = synth.crop > 0.0;
            TrainSet::synthetic(seed, scenes, members, family, magnitude, &synth, &desc)?
        }
        (None, None) => unreachable!("synthetic options resolved whenever no data is given"),
    };
    let grid = set
        .features
        .first()
        .map(FeatureMap::grid)
        .ok_or_else(|| CliError::Lib(semmatch::Error::Contract("training needs at least one pair".into())))?;
    let model_cfg = model(r, a.model, grid)?;
    announce(r);

    let init = init_weights(seed, model_cfg)?;
    let outcome = run_training(&set, &init, &cfg)?;
    outcome.weights.save(&out)?;
    if let Some(log) = &log {
        write(
            log,
            format!("step\tL_total\tL_match\tL_cycle\tL_trans\n{}", outcome.log.to_tsv()),
        )?;
    }
    println!(
        "trained {} pairs, {} warm-up steps, {} weak steps; weights in {}",
        set.pairs.len(),
        outcome.log.warmup.len(),
        outcome.log.steps.len(),
        out.display()
    );
    if let Some(last) = outcome.log.steps.last() {
        println!(
            "final losses: total {:.6} matching {:.6} cycle {:.6} transitivity {:.6}",
            last.total, last.matching, last.cycle, last.transitivity
        );
    }
    Ok(())
}

pub fn eval(r: &mut Resolver, a: EvalArgs, seed: u64) -> Result<()> {
    let data = r.path("data", a.data)?;
    let weights = r.optional_path("weights", a.weights)?;
    let taus: Taus = r.value("tau", a.tau, Taus(vec![0.05, 0.1, 0.15]))?;
    let side = r.value("box_side", a.box_side, BoxSideArg(Default::default()))?.0;
    let (desc, dsmf) = descriptor(r, a.descriptor)?;
    let report = r.optional_path("report", a.report)?;
    announce(r);

    let (table, root) = if data.is_dir() {
        (data.join("pairs.tsv"), data.clone())
    } else {
        (data.clone(), data.parent().map(Path::to_path_buf).unwrap_or_default())
    };
    let records = load_dataset(&table)?;
    let source: Box<dyn FeatureSource> = if dsmf {
        Box::new(SidecarSource { root })
    } else {
        Box::new(DescriptorSource { root, config: desc })
    };
    let first = records
        .first()
        .ok_or_else(|| CliError::Lib(semmatch::Error::Contract("evaluation needs at least one record".into())))?;
    let grid = source.features(&first.source)?.grid();
    let w = weights_or_identity(weights.as_ref(), seed, grid)?;
    let reports = evaluate_pairs(&records, &w, &taus.0, source.as_ref(), side)?;
    let mut tsv = String::new();
    for rep in &reports {
        println!("{rep}");
        tsv.push_str(&rep.to_tsv());
    }
    if let Some(path) = &report {
        write(path, tsv)?;
    }
    Ok(())
}

fn mean_distance(p: &[[f64; 2]], q: &[[f64; 2]]) -> f64 {
    let sum: f64 = p.iter().zip(q).map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])).sum();
    sum / p.len().max(1) as f64
}

pub fn match_pair(r: &mut Resolver, a: MatchArgs, seed: u64) -> Result<()> {
    let img_a = r.path("a", a.a)?;
    let img_b = r.path("b", a.b)?;
    let weights = r.optional_path("weights", a.weights)?;
    let (desc, dsmf) = descriptor(r, a.descriptor)?;
    let gt = r.optional_path("gt", a.gt)?;
    let warped: bool = r.value("warped", a.warped, false)?;
    let out = r.path("out", a.out)?;
    announce(r);

    let (fa, fb) = (
        image_features(&img_a, &desc, dsmf)?,
        image_features(&img_b, &desc, dsmf)?,
    );
    let w = weights_or_identity(weights.as_ref(), seed, fa.grid())?;
    let t = predict(&correlate(&fa, &fb)?, &fa, &fb, &w)?;
    let (size_a, size_b) = (Image::probe_size(&img_a)?, Image::probe_size(&img_b)?);

    create_dir(&out)?;
    t.save(&out.join("transform.txt"))?;
    let links = lattice_links(&t, OVERLAY_SIDE, size_a, size_b);
    write(&out.join("overlay.svg"), render_svg(&links, size_b))?;
    let displacement = links.iter().map(Link::length).sum::<f64>() / links.len() as f64;
    let to: Vec<[f64; 2]> = links.iter().map(|l| l.to).collect();
    let mut sidecar = format!("mean_displacement_px\t{displacement}\n");
    if let Some(gt) = &gt {
        let gt = GeometricTransform::load(gt)?;
        let truth: Vec<[f64; 2]> = lattice_links(&gt, OVERLAY_SIDE, size_a, size_b)
            .iter()
            .map(|l| l.to)
            .collect();
        let err = mean_distance(&to, &truth);
        sidecar.push_str(&format!("mean_endpoint_error_px\t{err}\n"));
        println!("mean endpoint error {err:.3} px");
    }
    write(&out.join("match.tsv"), sidecar)?;
    if warped {
        let image = Image::load(&img_a)?;
        let moved = warp_image(&image, &t);
        // The resampled image lives in B's frame, so it takes B's size.
        let moved = if (moved.width(), moved.height()) == size_b {
            moved
        } else {
            moved.resize(size_b.0, size_b.1)?
        };
        moved.save_ppm(&out.join("warped.ppm"))?;
    }
    println!("{t}");
    Ok(())
}

pub fn warp(r: &mut Resolver, a: WarpArgs) -> Result<()> {
    let image = r.path("image", a.image)?;
    let transform = r.path("transform", a.transform)?;
    let out = r.path("out", a.out)?;
    announce(r);

    let t = GeometricTransform::load(&transform)?;
    warp_image(&Image::load(&image)?, &t).save_ppm(&out)?;
    Ok(())
}

/// Each cell becomes a `scale x scale` gray block.
fn mask_image(m: &ForegroundMask, scale: usize) -> Result<Image> {
    let scale = scale.max(semmatch::features::image::MIN_SIDE.div_ceil(m.shape.h.min(m.shape.w)));
    let img = Image::from_fn(m.shape.w * scale, m.shape.h * scale, |x, y| {
        let v = (255.0 * f64::from(m.get(y / scale, x / scale)).clamp(0.0, 1.0)).round() as u8;
        [v, v, v]
    })?;
    Ok(img)
}

pub fn masks(r: &mut Resolver, a: MasksArgs) -> Result<()> {
    let img_a = r.path("a", a.a)?;
    let img_b = r.path("b", a.b)?;
    let (desc, dsmf) = descriptor(r, a.descriptor)?;
    let out = r.path("out", a.out)?;
    announce(r);

    let (fa, fb) = (
        image_features(&img_a, &desc, dsmf)?,
        image_features(&img_b, &desc, dsmf)?,
    );
    let s_ab = correlate(&fa, &fb)?;
    let (m_a, m_b) = (foreground_mask(&s_ab), foreground_mask(&s_ab.transpose()));
    create_dir(&out)?;
    mask_image(&m_a, desc.cell_size)?.save_ppm(&out.join("mask_a.ppm"))?;
    mask_image(&m_b, desc.cell_size)?.save_ppm(&out.join("mask_b.ppm"))?;
    println!("mean mask A {:.4}\nmean mask B {:.4}", m_a.mean(), m_b.mean());
    Ok(())
}

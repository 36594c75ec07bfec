//! The five subcommands: synth, pseudo, train, render, eval. Each is a thin
//! file-level wrapper over the core modules; all are idempotent for fixed
//! inputs and seeds.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use semsplat_core::checkpoint;
use semsplat_core::decoder::decode;
use semsplat_core::eval::{argmax_labels, miou, pca_apply, pca_fit, timing_report, MiouReport};
use semsplat_core::image::{Image, IGNORE_LABEL};
use semsplat_core::pseudolabel::build_pseudo_labels;
use semsplat_core::rasterizer::{render, RenderOptions};
use semsplat_core::trainer::{sample_view, write_loss_csv, TrainConfig, Trainer};

use crate::bundle::{load_cameras, load_scene, read_instances, read_meta, BundlePaths};
use crate::pngio;
use crate::synth::{write_bundle, SynthConfig};
use crate::CliError;

pub fn cmd_synth(out: &Path, cfg: &SynthConfig) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let meta = write_bundle(out, cfg)?;
    println!(
        "wrote scene: {} views ({} labeled), {} classes, {}x{}, at {}",
        meta.views.len(),
        meta.labeled.len(),
        meta.num_classes,
        meta.width,
        meta.height,
        out.display()
    );
    Ok(())
}

pub fn cmd_pseudo(
    scene_dir: &Path,
    reference: Option<&str>,
    margin: f64,
) -> Result<(), CliError> {
    let paths = BundlePaths::new(scene_dir);
    let meta = read_meta(&paths)?;
    let reference = match reference {
        Some(r) => r.to_string(),
        None => meta
            .labeled
            .first()
            .cloned()
            .ok_or_else(|| CliError::Config("scene has no labeled views".into()))?,
    };
    let instances = read_instances(&paths, &meta)?;
    let gt = if paths.label(&reference).exists() {
        Some(pngio::read_label_map(&paths.label(&reference))?)
    } else {
        None
    };
    let pseudo = build_pseudo_labels(&instances, &reference, gt.as_ref(), margin)?;

    let mask_palette = [[0u8, 0, 0], [255, 255, 255]];
    fs::create_dir_all(scene_dir.join("pseudo"))
        .map_err(|e| CliError::io(&scene_dir.join("pseudo"), e))?;
    let mut boundary_pixels = 0usize;
    for (id, pv) in &pseudo {
        pngio::write_label_map(&paths.pseudo_label(id), &pv.label, &meta.class_colors)?;
        pngio::write_label_map(&paths.pseudo_mask(id), &pv.boundary, &mask_palette)?;
        boundary_pixels += pv.boundary.data.iter().filter(|&&v| v == 1).count();
    }
    println!(
        "wrote pseudo labels for {} views (reference {}, margin {margin}); {} boundary pixels total",
        pseudo.len(),
        reference,
        boundary_pixels
    );
    Ok(())
}

#[derive(Debug, Default, Clone)]
pub struct TrainArgs {
    pub config_path: Option<PathBuf>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

pub fn load_train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut config = match &args.config_path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(steps) = args.steps {
        config.total_steps = steps;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    Ok(config)
}

pub fn cmd_train(scene_dir: &Path, out: &Path, args: &TrainArgs) -> Result<(), CliError> {
    let config = load_train_config(args)?;
    let paths = BundlePaths::new(scene_dir);
    let scene = load_scene(&paths)?;
    let gt_views = scene.views.iter().filter(|v| v.label.is_some()).count();
    let pseudo_views = scene
        .views
        .iter()
        .filter(|v| v.label.is_none() && v.pseudo.is_some())
        .count();
    println!(
        "scene: {} views ({gt_views} labeled, {pseudo_views} pseudo), {} init points, {} classes",
        scene.views.len(),
        scene.init_points.len(),
        scene.num_classes
    );

    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut trainer = Trainer::new(&scene, &config)?;
    let mut log = Vec::with_capacity(config.total_steps);
    for step in 0..config.total_steps {
        let view = sample_view(
            &scene.views,
            step,
            config.seed,
            config.gt_per_block,
            config.pseudo_per_block,
        )?;
        let report = trainer.train_step(view, step)?;
        log.push((step, report));
        if step % 500 == 0 || step + 1 == config.total_steps {
            println!(
                "step {step:>6}  total {:.5}  l1 {:.5}  dssim {:.5}  ce {:.5}  agg2d {:.5}  agg3d {:.5}  points {}",
                report.total,
                report.l1,
                report.dssim,
                report.ce,
                report.agg2d,
                report.agg3d,
                trainer.cloud.len()
            );
        }
        let done = step + 1;
        if config.densify_interval > 0
            && done % config.densify_interval == 0
            && done < config.total_steps
        {
            let stats = trainer.densify_and_prune(done)?;
            println!(
                "densify @ {done}: +{} cloned, +{} split, -{} pruned -> {} points",
                stats.cloned, stats.split, stats.pruned, stats.points_after
            );
        }
    }

    let ckpt = out.join("model.ckpt");
    checkpoint::save(&ckpt, &trainer.cloud, &trainer.decoder)?;
    let csv = out.join("losses.csv");
    write_loss_csv(&csv, &log).map_err(|e| CliError::io(&csv, e))?;
    let cfg_out = out.join("train_config.toml");
    fs::write(
        &cfg_out,
        toml::to_string_pretty(&config)
            .map_err(|e| CliError::Format(format!("config serialization: {e}")))?,
    )
    .map_err(|e| CliError::io(&cfg_out, e))?;
    println!(
        "checkpoint: {} ({} points); loss log: {}",
        ckpt.display(),
        trainer.cloud.len(),
        csv.display()
    );
    Ok(())
}

#[derive(Debug, Default, Clone)]
pub struct RenderArgs {
    /// Restrict to these view ids; `None` renders every view in the scene.
    pub views: Option<Vec<String>>,
    pub pca: bool,
    /// Fit one PCA basis over all rendered views instead of per image.
    pub pca_scene: bool,
    pub threads: usize,
    /// Measure per-view render times (first render discarded as warm-up).
    pub timing: bool,
}

pub fn cmd_render(
    ckpt: &Path,
    scene_dir: &Path,
    out: &Path,
    args: &RenderArgs,
) -> Result<(), CliError> {
    let (cloud, decoder) = checkpoint::load(ckpt)?;
    let paths = BundlePaths::new(scene_dir);
    let (meta, cameras) = load_cameras(&paths)?;
    let selected: Vec<&(String, semsplat_core::Intrinsics<f32>, semsplat_core::Pose<f32>)> =
        match &args.views {
            Some(ids) => {
                let wanted: BTreeSet<&str> = ids.iter().map(|s| s.as_str()).collect();
                for id in &wanted {
                    if !cameras.iter().any(|(cid, _, _)| cid == id) {
                        return Err(CliError::Config(format!("unknown view id {id}")));
                    }
                }
                cameras
                    .iter()
                    .filter(|(id, _, _)| wanted.contains(id.as_str()))
                    .collect()
            }
            None => cameras.iter().collect(),
        };
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let opts = RenderOptions {
        threads: args.threads,
        ..Default::default()
    };
    let mut feature_maps = Vec::new();
    for (id, k, pose) in &selected {
        let rendered = render(&cloud, k, pose, &opts);
        pngio::write_rgb(&out.join(format!("{id}_rgb.png")), &rendered.color)?;
        let logits = decode(&rendered.features, &decoder, args.threads)
            .map_err(|e| CliError::Shape(e.to_string()))?;
        let seg = argmax_labels(&logits);
        pngio::write_label_map(
            &out.join(format!("{id}_seg.png")),
            &seg,
            &meta.class_colors,
        )?;
        if args.pca {
            feature_maps.push((id.clone(), rendered.features));
        }
    }

    if args.pca {
        if args.pca_scene {
            let refs: Vec<&Image<f32>> = feature_maps.iter().map(|(_, m)| m).collect();
            let basis = pca_fit(&refs);
            for (id, map) in &feature_maps {
                pngio::write_rgb(&out.join(format!("{id}_pca.png")), &pca_apply(map, &basis))?;
            }
        } else {
            for (id, map) in &feature_maps {
                let basis = pca_fit(&[map]);
                pngio::write_rgb(&out.join(format!("{id}_pca.png")), &pca_apply(map, &basis))?;
            }
        }
    }

    // Class-color sidecar for the indexed segmentation PNGs.
    let palette_path = out.join("palette.csv");
    let mut palette = String::from("class,r,g,b\n");
    for (c, rgb) in meta.class_colors.iter().enumerate() {
        palette.push_str(&format!("{c},{},{},{}\n", rgb[0], rgb[1], rgb[2]));
    }
    fs::write(&palette_path, palette).map_err(|e| CliError::io(&palette_path, e))?;

    let mut summary = serde_json::json!({
        "views": selected.iter().map(|(id, _, _)| id.clone()).collect::<Vec<_>>(),
        "points": cloud.len(),
        "classes": decoder.classes(),
    });
    if args.timing {
        let view_cams: Vec<_> = selected.iter().map(|(_, k, p)| (*k, *p)).collect();
        let report = timing_report(&cloud, &view_cams, &opts);
        summary["timing_ms"] = serde_json::json!({
            "per_view": report.per_view_ms,
            "min": report.min_ms,
            "mean": report.mean_ms,
            "max": report.max_ms,
        });
        if !report.per_view_ms.is_empty() {
            println!(
                "render timing over {} views: min {:.1} ms, mean {:.1} ms, max {:.1} ms",
                report.per_view_ms.len(),
                report.min_ms,
                report.mean_ms,
                report.max_ms
            );
        }
    }
    let summary_path = out.join("summary.json");
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("json"),
    )
    .map_err(|e| CliError::io(&summary_path, e))?;
    println!("rendered {} views into {}", selected.len(), out.display());
    Ok(())
}

pub fn cmd_eval(
    pred_dir: &Path,
    gt_dir: &Path,
    out: &Path,
    classes: Option<usize>,
) -> Result<MiouReport, CliError> {
    let list = |dir: &Path| -> Result<Vec<String>, CliError> {
        let mut names: Vec<String> = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".png"))
            .collect();
        names.sort();
        Ok(names)
    };
    let preds = list(pred_dir)?;
    let gts: BTreeSet<String> = list(gt_dir)?.into_iter().collect();
    if preds.is_empty() {
        return Err(CliError::Config(format!(
            "no .png predictions in {}",
            pred_dir.display()
        )));
    }

    let mut pred_maps = Vec::new();
    let mut gt_maps = Vec::new();
    for name in &preds {
        if !gts.contains(name) {
            return Err(CliError::Config(format!(
                "prediction {name} has no ground-truth counterpart in {}",
                gt_dir.display()
            )));
        }
        let p = pngio::read_label_map(&pred_dir.join(name))?;
        let g = pngio::read_label_map(&gt_dir.join(name))?;
        if !p.same_shape(&g) {
            return Err(CliError::Shape(format!(
                "{name}: prediction {}x{} vs ground truth {}x{}",
                p.w, p.h, g.w, g.h
            )));
        }
        pred_maps.push(p);
        gt_maps.push(g);
    }

    let classes = classes.unwrap_or_else(|| {
        pred_maps
            .iter()
            .chain(&gt_maps)
            .flat_map(|m| m.data.iter())
            .filter(|&&v| v != IGNORE_LABEL)
            .map(|&v| v as usize + 1)
            .max()
            .unwrap_or(1)
    });
    let report = miou(&pred_maps, &gt_maps, classes)?;

    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let csv_path = out.join("miou.csv");
    let mut csv = std::io::BufWriter::new(
        fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?,
    );
    writeln!(csv, "class,iou").map_err(|e| CliError::io(&csv_path, e))?;
    for (c, iou) in report.per_class.iter().enumerate() {
        match iou {
            Some(v) => writeln!(csv, "{c},{v}"),
            None => writeln!(csv, "{c},"),
        }
        .map_err(|e| CliError::io(&csv_path, e))?;
    }
    csv.flush().map_err(|e| CliError::io(&csv_path, e))?;

    let summary_path = out.join("summary.json");
    let summary = serde_json::json!({
        "mean_iou": report.mean,
        "classes": classes,
        "views": preds.len(),
        "scored_pixels": report.confusion.total(),
        "per_class_iou": report.per_class,
    });
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("json"),
    )
    .map_err(|e| CliError::io(&summary_path, e))?;
    println!("mIoU = {:.4} over {} views", report.mean, preds.len());
    Ok(report)
}

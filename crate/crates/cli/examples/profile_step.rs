//! Times each stage of a training step separately. Dev tool, not shipped.

use std::time::Instant;

use semsplat_cli::bundle::{load_scene, BundlePaths};
use semsplat_core::decoder::{decode, decode_backward, SemanticDecoder};
use semsplat_core::image::Image;
use semsplat_core::losses::{agg2d_loss, agg3d_loss, ce_loss, dssim_loss, l1_loss};
use semsplat_core::rasterizer::{render, render_backward, RenderOptions};
use semsplat_core::spatial::SpatialIndex;
use semsplat_core::trainer::TrainConfig;

fn main() {
    let scene_dir = std::env::args().nth(1).expect("scene dir");
    let ckpt: Option<String> = std::env::args().nth(2);
    let scene = load_scene(&BundlePaths::new(std::path::Path::new(&scene_dir))).unwrap();
    let cfg = TrainConfig::default();
    let cloud = match &ckpt {
        Some(p) => semsplat_core::checkpoint::load(std::path::Path::new(p)).unwrap().0,
        None => semsplat_core::cloud::init_from_points::<f32>(&scene.init_points, 2, 16, 0).unwrap(),
    };
    let decoder = SemanticDecoder::<f32>::new(16, Some(32), scene.num_classes, 1);
    let index = SpatialIndex::build(&cloud.positions).unwrap();
    let view = &scene.views[0];
    let tile_size: usize = std::env::var("TILE").ok().and_then(|v| v.parse().ok()).unwrap_or(16);
    let thr: usize = std::env::var("THR").ok().and_then(|v| v.parse().ok()).unwrap_or(2);
    let opts = RenderOptions { threads: thr, tile_size };

    bin_stats(&cloud, &view.intrinsics, &view.pose);
    let reps = 10;
    let mut out = None;
    let t = Instant::now();
    for _ in 0..reps {
        out = Some(render(&cloud, &view.intrinsics, &view.pose, &opts));
    }
    let out = out.unwrap();
    println!("render forward: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
    println!(
        "  splats: {}, mean contributors/px: {:.1}",
        out.splats.len(),
        out.contributors.indices.len() as f64 / (out.color.h * out.color.w) as f64
    );

    let t = Instant::now();
    let mut logits = None;
    for _ in 0..reps {
        logits = Some(decode(&out.features, &decoder, 2).unwrap());
    }
    let logits = logits.unwrap();
    println!("decode forward: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = l1_loss(&out.color, &view.image).unwrap();
    }
    println!("l1: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = dssim_loss(&out.color, &view.image).unwrap();
    }
    println!("dssim: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let label = view.label.as_ref().unwrap();
    let t = Instant::now();
    let mut dce = None;
    for _ in 0..reps {
        dce = Some(ce_loss(&logits, label, None).unwrap());
    }
    let (_, dce) = dce.unwrap();
    println!("ce: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = agg2d_loss(&out.features, 4096.min(out.features.h * out.features.w / 6), 5, 7).unwrap();
    }
    println!("agg2d: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let _ = agg3d_loss(&cloud, &index, 4096.min(cloud.len()), 5, 7).unwrap();
    }
    println!("agg3d: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    let mut dfeat = None;
    for _ in 0..reps {
        dfeat = Some(decode_backward(&out.features, &decoder, &dce, 2).unwrap());
    }
    let (dfeat, _) = dfeat.unwrap();
    println!("decode backward: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let adjc = Image::<f32>::zeros(out.color.h, out.color.w, 3);
    let mut adjc2 = adjc.clone();
    adjc2.data.iter_mut().for_each(|v| *v = 0.001);
    let t = Instant::now();
    for _ in 0..reps {
        let _ = render_backward(&cloud, &view.intrinsics, &view.pose, &out, &adjc2, &dfeat, &opts)
            .unwrap();
    }
    println!("render backward: {:.1} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
}

// Counts candidate tests vs accepted blends at acceptance scale.

#[allow(dead_code)]
fn bin_stats(
    cloud: &semsplat_core::cloud::GaussianCloud<f32>,
    k: &semsplat_core::Intrinsics<f32>,
    pose: &semsplat_core::Pose<f32>,
) {
    use semsplat_core::math::max_eig22;
    use semsplat_core::rasterizer::project;
    let splats = project(cloud, k, pose);
    let (w, h) = (k.width as usize, k.height as usize);
    let tile = 16usize;
    let tiles_x = w.div_ceil(tile);
    let tiles_y = h.div_ceil(tile);
    let mut bins = vec![0usize; tiles_x * tiles_y];
    let mut total_px_area = 0f64;
    for s in &splats {
        let r = 3.0 * max_eig22(&s.cov2d).max(0.0).sqrt();
        let x0 = ((s.mean2d[0] - r - 0.5).ceil().max(0.0) as usize).min(w - 1);
        let x1 = ((s.mean2d[0] + r - 0.5).floor().max(0.0) as usize).min(w - 1);
        let y0 = ((s.mean2d[1] - r - 0.5).ceil().max(0.0) as usize).min(h - 1);
        let y1 = ((s.mean2d[1] + r - 0.5).floor().max(0.0) as usize).min(h - 1);
        total_px_area += ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        for ty in (y0 / tile)..=(y1 / tile) {
            for tx in (x0 / tile)..=(x1 / tile) {
                bins[ty * tiles_x + tx] += 1;
            }
        }
    }
    let total: usize = bins.iter().sum();
    let maxb = bins.iter().max().unwrap();
    println!(
        "bins: total {total}, mean/tile {:.1}, max/tile {maxb}, mean bbox px {:.0}",
        total as f64 / bins.len() as f64,
        total_px_area / splats.len() as f64
    );
}

//! Naive per-pixel reference renderer: every splat is tested at every pixel
//! with its own little 2x2 inverse, splats are sorted by (depth, source
//! index), and blending runs front to back with optional early termination.
//! No tiles, no bounding boxes, no parallelism.

use semsplat_core::cloud::GaussianCloud;
use semsplat_core::image::Image;
use semsplat_core::rasterizer::{project, Projected2DGaussian, ALPHA_CLAMP, FOOTPRINT_SIGMA};
use semsplat_core::{Intrinsics, Pose, Scalar};

pub struct ReferenceOutput<T> {
    pub color: Image<T>,
    pub features: Image<T>,
    pub alpha: Image<T>,
}

/// Blends the projected splats the slow, obvious way. `early_stop` mirrors
/// the production transmittance cutoff when given.
pub fn reference_render<T: Scalar>(
    cloud: &GaussianCloud<T>,
    k: &Intrinsics<T>,
    pose: &Pose<T>,
    early_stop: Option<f64>,
) -> ReferenceOutput<T> {
    let mut splats: Vec<Projected2DGaussian<T>> = project(cloud, k, pose);
    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then(a.source_index.cmp(&b.source_index))
    });

    let (w, h) = (k.width as usize, k.height as usize);
    let fdim = cloud.feature_dim;
    let mut color = Image::zeros(h, w, 3);
    let mut features = Image::zeros(h, w, fdim);
    let mut alpha_map = Image::zeros(h, w, 1);

    let cutoff = FOOTPRINT_SIGMA * FOOTPRINT_SIGMA;
    for y in 0..h {
        for x in 0..w {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let mut transmittance = 1.0f64;
            let mut acc_c = [0.0f64; 3];
            let mut acc_f = vec![0.0f64; fdim];
            let mut acc_a = 0.0f64;
            for s in &splats {
                let c00 = s.cov2d[0][0].as_f64();
                let c01 = s.cov2d[0][1].as_f64();
                let c10 = s.cov2d[1][0].as_f64();
                let c11 = s.cov2d[1][1].as_f64();
                let det = c00 * c11 - c01 * c10;
                let dx = px - s.mean2d[0].as_f64();
                let dy = py - s.mean2d[1].as_f64();
                let m = (c11 * dx * dx - (c01 + c10) * dx * dy + c00 * dy * dy) / det;
                if m > cutoff {
                    continue;
                }
                let alpha = (s.opacity.as_f64() * (-0.5 * m).exp()).min(ALPHA_CLAMP);
                let weight = alpha * transmittance;
                for ch in 0..3 {
                    acc_c[ch] += s.color[ch].as_f64() * weight;
                }
                for (af, sf) in acc_f.iter_mut().zip(cloud.feature_of(s.source_index)) {
                    *af += sf.as_f64() * weight;
                }
                acc_a += weight;
                transmittance *= 1.0 - alpha;
                if let Some(stop) = early_stop {
                    if transmittance < stop {
                        break;
                    }
                }
            }
            for ch in 0..3 {
                *color.at_mut(y, x, ch) = T::from_f64(acc_c[ch]).unwrap();
            }
            for (ch, af) in acc_f.iter().enumerate() {
                *features.at_mut(y, x, ch) = T::from_f64(*af).unwrap();
            }
            *alpha_map.at_mut(y, x, 0) = T::from_f64(acc_a).unwrap();
        }
    }
    ReferenceOutput {
        color,
        features,
        alpha: alpha_map,
    }
}

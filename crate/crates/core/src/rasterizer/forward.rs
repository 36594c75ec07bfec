//! Forward splatting: tile-binned, front-to-back alpha blending of color
//! and semantic features with a shared transmittance.
//!
//! Work is split into horizontal bands one tile tall. Each band gathers its
//! tiles' candidate splats into contiguous arrays once, then blends its
//! pixels; pixel writes are disjoint, so the output is identical at any
//! thread count.

use rayon::prelude::*;

use super::{
    depth_sort, prepare_splats, project, Contributors, Projected2DGaussian, RenderOptions,
    RenderOutput, ALPHA_CLAMP, EARLY_STOP_TRANSMITTANCE, FOOTPRINT_SIGMA,
};
use crate::camera::{Intrinsics, Pose};
use crate::cloud::GaussianCloud;
use crate::image::Image;
use crate::math::sc;
use crate::Scalar;

/// Splat data gathered per tile for cache-friendly pixel loops; the feature
/// vectors live in a parallel flat array.
struct Candidate<T> {
    mean: [T; 2],
    /// Symmetric conic (inverse covariance): c00, c01, c11.
    conic: [T; 3],
    opacity: T,
    color: [T; 3],
    bbox: (u16, u16, u16, u16),
    si: u32,
}

struct BandOut<T> {
    tests: u64,
    color: Vec<T>,
    features: Vec<T>,
    alpha: Vec<T>,
    counts: Vec<u32>,
    indices: Vec<u32>,
    alphas: Vec<T>,
}

/// Renders the cloud into the view. Pixels no splat covers stay black with
/// zero features and zero alpha.
pub fn render<T: Scalar>(
    cloud: &GaussianCloud<T>,
    k: &Intrinsics<T>,
    pose: &Pose<T>,
    opts: &RenderOptions,
) -> RenderOutput<T> {
    let (w, h) = (k.width as usize, k.height as usize);
    let fdim = cloud.feature_dim;
    let t_prep = std::time::Instant::now();
    let splats = depth_sort(project(cloud, k, pose));
    let prepared = prepare_splats(&splats, w, h);
    if std::env::var_os("SEMSPLAT_PROFILE").is_some() {
        eprintln!("  project+sort: {:.1} ms", t_prep.elapsed().as_secs_f64() * 1e3);
    }

    // Bin splats (already depth-sorted) into tiles; per-tile lists keep the
    // global order, so per-pixel iteration is in blend order. Bands are
    // shallower than tiles are wide, for parallel load balance.
    let tile = opts.tile_size.max(1);
    let band_h = tile.min(4);
    let tiles_x = w.div_ceil(tile);
    let bands_y = h.div_ceil(band_h);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * bands_y];
    for (si, prep) in prepared.iter().enumerate() {
        let Some((x0, x1, y0, y1)) = prep.bbox else {
            continue;
        };
        for by in (y0 / band_h)..=(y1 / band_h) {
            for tx in (x0 / tile)..=(x1 / tile) {
                bins[by * tiles_x + tx].push(si as u32);
            }
        }
    }

    let cutoff = sc::<T>(FOOTPRINT_SIGMA * FOOTPRINT_SIGMA);
    let clamp = sc::<T>(ALPHA_CLAMP);
    let stop = sc::<T>(EARLY_STOP_TRANSMITTANCE);
    let half = sc::<T>(0.5);

    let band_fn = |ty: usize| -> BandOut<T> {
        let y_lo = ty * band_h;
        let y_hi = ((ty + 1) * band_h).min(h);
        let rows = y_hi - y_lo;
        let mut band = BandOut {
            tests: 0,
            color: vec![T::zero(); rows * w * 3],
            features: vec![T::zero(); rows * w * fdim],
            alpha: vec![T::zero(); rows * w],
            counts: vec![0u32; rows * w],
            indices: Vec::with_capacity(rows * w * 16),
            alphas: Vec::with_capacity(rows * w * 16),
        };
        // Gather this band's candidates tile by tile, copying their feature
        // vectors into one contiguous block so the pixel loop stays local.
        let mut candidates: Vec<Candidate<T>> = Vec::new();
        let mut cand_feats: Vec<T> = Vec::new();
        let mut ranges: Vec<(u32, u32)> = Vec::with_capacity(tiles_x);
        for tx in 0..tiles_x {
            let start = candidates.len() as u32;
            for &si in &bins[ty * tiles_x + tx] {
                let s = &splats[si as usize];
                let p = &prepared[si as usize];
                let (x0, x1, y0, y1) = p.bbox.expect("binned splats have a bbox");
                candidates.push(Candidate {
                    mean: s.mean2d,
                    conic: [p.conic[0][0], p.conic[0][1], p.conic[1][1]],
                    opacity: s.opacity,
                    color: s.color,
                    bbox: (x0 as u16, x1 as u16, y0 as u16, y1 as u16),
                    si,
                });
                cand_feats.extend_from_slice(cloud.feature_of(s.source_index));
            }
            ranges.push((start, candidates.len() as u32));
        }

        for y in y_lo..y_hi {
            let cy = T::from_usize(y).unwrap() + half;
            let row = y - y_lo;
            for x in 0..w {
                let (c0, c1) = ranges[x / tile];
                if c0 == c1 {
                    continue;
                }
                let cx = T::from_usize(x).unwrap() + half;
                let base = row * w + x;
                let color = &mut band.color[base * 3..base * 3 + 3];
                let features = &mut band.features[base * fdim..base * fdim + fdim];
                let mut alpha_sum = T::zero();
                let mut count = 0u32;
                let mut transmittance = T::one();
                for (ci, cand) in candidates[c0 as usize..c1 as usize].iter().enumerate() {
                    band.tests += 1;
                    let (x0, x1, y0, y1) = cand.bbox;
                    if (x as u16) < x0 || (x as u16) > x1 || (y as u16) < y0 || (y as u16) > y1
                    {
                        continue;
                    }
                    let dx = cx - cand.mean[0];
                    let dy = cy - cand.mean[1];
                    let m = cand.conic[0] * dx * dx
                        + (cand.conic[1] + cand.conic[1]) * dx * dy
                        + cand.conic[2] * dy * dy;
                    if m > cutoff {
                        continue;
                    }
                    let alpha = (cand.opacity * (-m * half).exp()).min(clamp);
                    let weight = alpha * transmittance;
                    color[0] += cand.color[0] * weight;
                    color[1] += cand.color[1] * weight;
                    color[2] += cand.color[2] * weight;
                    let fi = (c0 as usize + ci) * fdim;
                    let feat = &cand_feats[fi..fi + fdim];
                    for (f, &sf) in features.iter_mut().zip(feat) {
                        *f += sf * weight;
                    }
                    alpha_sum += weight;
                    band.indices.push(cand.si);
                    band.alphas.push(alpha);
                    count += 1;
                    transmittance *= T::one() - alpha;
                    if transmittance < stop {
                        break;
                    }
                }
                band.alpha[base] = alpha_sum;
                band.counts[base] = count;
            }
        }
        band
    };

    let t_bands = std::time::Instant::now();
    let bands: Vec<BandOut<T>> = if opts.threads == 1 {
        (0..bands_y).map(band_fn).collect()
    } else {
        (0..bands_y).into_par_iter().map(band_fn).collect()
    };
    if std::env::var_os("SEMSPLAT_PROFILE").is_some() {
        let tests: u64 = bands.iter().map(|b| b.tests).sum();
        eprintln!("  bands: {:.1} ms, candidate tests {}", t_bands.elapsed().as_secs_f64() * 1e3, tests);
    }

    let mut color = Image::zeros(h, w, 3);
    let mut features = Image::zeros(h, w, fdim);
    let mut alpha = Image::zeros(h, w, 1);
    let total: usize = bands.iter().map(|b| b.indices.len()).sum();
    let mut contributors = Contributors {
        offsets: Vec::with_capacity(h * w + 1),
        indices: Vec::with_capacity(total),
    };
    contributors.offsets.push(0);
    let mut contrib_alphas: Vec<T> = Vec::with_capacity(total);
    let mut y0 = 0usize;
    for band in bands {
        let rows = band.alpha.len() / w;
        color.data[y0 * w * 3..(y0 + rows) * w * 3].copy_from_slice(&band.color);
        features.data[y0 * w * fdim..(y0 + rows) * w * fdim].copy_from_slice(&band.features);
        alpha.data[y0 * w..(y0 + rows) * w].copy_from_slice(&band.alpha);
        let mut running = *contributors.offsets.last().unwrap();
        for &c in &band.counts {
            running += c;
            contributors.offsets.push(running);
        }
        contributors.indices.extend_from_slice(&band.indices);
        contrib_alphas.extend_from_slice(&band.alphas);
        y0 += rows;
    }

    RenderOutput {
        color,
        features,
        alpha,
        splats,
        contributors,
        contrib_alphas,
    }
}

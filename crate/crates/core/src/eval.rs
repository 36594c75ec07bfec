//! Segmentation metrics, feature-map PCA visualization, and render timing.

use std::time::Instant;

use thiserror::Error;

use crate::camera::{Intrinsics, Pose};
use crate::cloud::GaussianCloud;
use crate::image::{Image, LabelMap, IGNORE_LABEL};
use crate::rasterizer::{render, RenderOptions};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    #[inline]
    pub fn at(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<(), EvalError> {
        if !gt.same_shape(pred) {
            return Err(EvalError::ShapeMismatch(format!(
                "labels {}x{} vs predictions {}x{}",
                gt.h, gt.w, pred.h, pred.w
            )));
        }
        for (g, p) in gt.data.iter().zip(&pred.data) {
            if *g == IGNORE_LABEL || *p == IGNORE_LABEL {
                continue;
            }
            let (g, p) = (*g as usize, *p as usize);
            if g < self.classes && p < self.classes {
                self.counts[g * self.classes + p] += 1;
            }
        }
        Ok(())
    }
}

/// Per-class IoU and their mean.
#[derive(Debug, Clone)]
pub struct MiouReport {
    /// `None` for classes absent from both ground truth and prediction;
    /// those are excluded from the mean.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
    pub confusion: ConfusionMatrix,
}

/// Mean intersection-over-union across paired label maps. Pixels labeled 255
/// on either side are not scored.
pub fn miou(
    predictions: &[LabelMap],
    ground_truth: &[LabelMap],
    classes: usize,
) -> Result<MiouReport, EvalError> {
    if predictions.len() != ground_truth.len() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} predictions vs {} ground-truth maps",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let mut confusion = ConfusionMatrix::new(classes);
    for (p, g) in predictions.iter().zip(ground_truth) {
        confusion.accumulate(g, p)?;
    }
    let mut per_class = Vec::with_capacity(classes);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..classes {
        let tp = confusion.at(c, c);
        let fp: u64 = (0..classes).filter(|&g| g != c).map(|g| confusion.at(g, c)).sum();
        let fneg: u64 = (0..classes).filter(|&p| p != c).map(|p| confusion.at(c, p)).sum();
        if tp + fp + fneg == 0 {
            per_class.push(None);
            continue;
        }
        let iou = tp as f64 / (tp + fp + fneg) as f64;
        per_class.push(Some(iou));
        sum += iou;
        counted += 1;
    }
    let mean = if counted == 0 { 0.0 } else { sum / counted as f64 };
    Ok(MiouReport {
        per_class,
        mean,
        confusion,
    })
}

/// Argmax over logit channels; ties pick the smaller class index.
pub fn argmax_labels<T: Scalar>(logits: &Image<T>) -> LabelMap {
    let mut out = LabelMap::filled(logits.h, logits.w, 0);
    for y in 0..logits.h {
        for x in 0..logits.w {
            let z = logits.pixel(y, x);
            let mut best = 0usize;
            for (c, v) in z.iter().enumerate().skip(1) {
                if *v > z[best] {
                    best = c;
                }
            }
            out.set(y, x, best as u8);
        }
    }
    out
}

/// Principal axes of a feature set, fitted by eigendecomposition of the
/// channel covariance.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Up to 3 component vectors; fewer when the covariance rank is lower.
    pub components: Vec<Vec<f64>>,
}

/// Fits a 3-component PCA basis on the pixels of the given maps (one map for
/// per-image fitting, several for a scene-consistent basis). Component signs
/// are fixed by making the largest-magnitude loading positive.
pub fn pca_fit<T: Scalar>(maps: &[&Image<T>]) -> PcaBasis {
    let dim = maps.first().map_or(0, |m| m.c);
    let total: usize = maps.iter().map(|m| m.h * m.w).sum();
    let mut mean = vec![0.0f64; dim];
    for m in maps {
        for px in 0..m.h * m.w {
            for c in 0..dim {
                mean[c] += m.data[px * dim + c].as_f64();
            }
        }
    }
    mean.iter_mut().for_each(|v| *v /= total.max(1) as f64);

    let mut cov = vec![0.0f64; dim * dim];
    let mut centered = vec![0.0f64; dim];
    for m in maps {
        for px in 0..m.h * m.w {
            for c in 0..dim {
                centered[c] = m.data[px * dim + c].as_f64() - mean[c];
            }
            for i in 0..dim {
                for j in i..dim {
                    cov[i * dim + j] += centered[i] * centered[j];
                }
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            cov[i * dim + j] = cov[j * dim + i];
        }
    }
    cov.iter_mut().for_each(|v| *v /= total.max(1) as f64);

    let (eigvals, eigvecs) = jacobi_eigen_sym(&cov, dim);
    let scale = eigvals.first().copied().unwrap_or(0.0).abs();
    let tol = (scale * 1e-9).max(1e-12);
    let mut components = Vec::new();
    for rank in 0..3.min(dim) {
        if eigvals[rank] <= tol {
            break;
        }
        let mut v = eigvecs[rank].clone();
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
    }
    PcaBasis { mean, components }
}

/// Projects a feature map onto a PCA basis and min-max normalizes each
/// channel to [0, 1]. Missing components (degenerate covariance) leave their
/// channel zero.
pub fn pca_apply<T: Scalar>(features: &Image<T>, basis: &PcaBasis) -> Image<T> {
    let (h, w, dim) = (features.h, features.w, features.c);
    let mut out = Image::<T>::zeros(h, w, 3);
    let pixels = h * w;
    for (ci, comp) in basis.components.iter().enumerate() {
        let mut vals = vec![0.0f64; pixels];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (px, val) in vals.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..dim {
                acc += (features.data[px * dim + c].as_f64() - basis.mean[c]) * comp[c];
            }
            *val = acc;
            lo = lo.min(acc);
            hi = hi.max(acc);
        }
        let range = hi - lo;
        for (px, val) in vals.iter().enumerate() {
            let norm = if range > 0.0 { (val - lo) / range } else { 0.0 };
            out.data[px * 3 + ci] = T::from_f64(norm).unwrap();
        }
    }
    out
}

/// PCA fitted on this map alone; the usual per-image visualization.
pub fn pca_visualize<T: Scalar>(features: &Image<T>) -> Image<T> {
    let basis = pca_fit(&[features]);
    pca_apply(features, &basis)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; eigenpairs sorted
/// by descending eigenvalue. Plenty for the 16x16 covariances used here.
fn jacobi_eigen_sym(matrix: &[f64], dim: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0f64; dim * dim];
    for i in 0..dim {
        v[i * dim + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..dim {
            for j in (i + 1)..dim {
                off += a[i * dim + j] * a[i * dim + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = a[p * dim + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * dim + p];
                let aqq = a[q * dim + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[k * dim + p];
                    let akq = a[k * dim + q];
                    a[k * dim + p] = c * akp - s * akq;
                    a[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[p * dim + k];
                    let aqk = a[q * dim + k];
                    a[p * dim + k] = c * apk - s * aqk;
                    a[q * dim + k] = s * apk + c * aqk;
                }
                for k in 0..dim {
                    let vkp = v[k * dim + p];
                    let vkq = v[k * dim + q];
                    v[k * dim + p] = c * vkp - s * vkq;
                    v[k * dim + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..dim)
        .map(|i| {
            (
                a[i * dim + i],
                (0..dim).map(|k| v[k * dim + i]).collect(),
            )
        })
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let vals = pairs.iter().map(|(e, _)| *e).collect();
    let vecs = pairs.into_iter().map(|(_, vec)| vec).collect();
    (vals, vecs)
}

/// Per-view render wall-clock times; the very first render is a discarded
/// warm-up, so a single-view input produces an empty report.
#[derive(Debug, Clone, Default)]
pub struct TimingReport {
    pub per_view_ms: Vec<f64>,
    pub min_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

pub fn timing_report<T: Scalar>(
    cloud: &GaussianCloud<T>,
    views: &[(Intrinsics<T>, Pose<T>)],
    opts: &RenderOptions,
) -> TimingReport {
    if views.is_empty() {
        return TimingReport::default();
    }
    let _warmup = render(cloud, &views[0].0, &views[0].1, opts);
    let mut per_view_ms = Vec::with_capacity(views.len().saturating_sub(1));
    for (k, pose) in &views[1..] {
        let start = Instant::now();
        let _ = render(cloud, k, pose, opts);
        per_view_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    if per_view_ms.is_empty() {
        return TimingReport::default();
    }
    let min_ms = per_view_ms.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_ms = per_view_ms.iter().cloned().fold(0.0f64, f64::max);
    let mean_ms = per_view_ms.iter().sum::<f64>() / per_view_ms.len() as f64;
    TimingReport {
        per_view_ms,
        min_ms,
        mean_ms,
        max_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miou_perfect_prediction() {
        let m = LabelMap::from_vec(2, 2, vec![0, 1, 2, 1]);
        let r = miou(&[m.clone()], &[m], 3).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.confusion.total(), 4);
    }

    #[test]
    fn miou_disjoint_masks() {
        let gt = LabelMap::from_vec(1, 4, vec![1, 1, 0, 0]);
        let pred = LabelMap::from_vec(1, 4, vec![0, 0, 1, 1]);
        let r = miou(&[pred], &[gt], 2).unwrap();
        assert_eq!(r.per_class[0], Some(0.0));
        assert_eq!(r.per_class[1], Some(0.0));
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn miou_hand_confusion_fixture() {
        // gt = [0,0,1,1], pred = [0,1,1,1]: IoU0 = 1/2, IoU1 = 2/3.
        let gt = LabelMap::from_vec(2, 2, vec![0, 0, 1, 1]);
        let pred = LabelMap::from_vec(2, 2, vec![0, 1, 1, 1]);
        let r = miou(&[pred], &[gt], 2).unwrap();
        assert_eq!(r.per_class[0], Some(0.5));
        assert_eq!(r.per_class[1], Some(2.0 / 3.0));
        assert!((r.mean - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn miou_absent_classes_are_excluded() {
        let gt = LabelMap::from_vec(1, 2, vec![0, 0]);
        let pred = LabelMap::from_vec(1, 2, vec![0, 0]);
        let r = miou(&[pred], &[gt], 5).unwrap();
        assert_eq!(r.per_class[0], Some(1.0));
        assert!(r.per_class[1..].iter().all(|c| c.is_none()));
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn miou_ignore_pixels_not_scored() {
        let gt = LabelMap::from_vec(1, 3, vec![0, IGNORE_LABEL, 1]);
        let pred = LabelMap::from_vec(1, 3, vec![0, 1, 0]);
        let r = miou(&[pred], &[gt], 2).unwrap();
        assert_eq!(r.confusion.total(), 2);
    }

    #[test]
    fn miou_is_relabel_symmetric() {
        let gt = LabelMap::from_vec(2, 3, vec![0, 1, 2, 2, 1, 0]);
        let pred = LabelMap::from_vec(2, 3, vec![0, 2, 2, 1, 1, 0]);
        let r1 = miou(&[pred.clone()], &[gt.clone()], 3).unwrap();
        // Permute classes 0 -> 1 -> 2 -> 0 on both sides.
        let perm = |m: &LabelMap| {
            LabelMap::from_vec(m.h, m.w, m.data.iter().map(|&v| (v + 1) % 3).collect())
        };
        let r2 = miou(&[perm(&pred)], &[perm(&gt)], 3).unwrap();
        assert!((r1.mean - r2.mean).abs() < 1e-15);
        assert_eq!(r1.per_class[0], r2.per_class[1]);
        assert_eq!(r1.per_class[1], r2.per_class[2]);
        assert_eq!(r1.per_class[2], r2.per_class[0]);
    }

    #[test]
    fn pca_rank1_zero_pads() {
        // Features vary along a single direction.
        let mut img = Image::<f64>::zeros(4, 4, 8);
        for px in 0..16 {
            for c in 0..8 {
                img.data[px * 8 + c] = px as f64 * (c as f64 + 1.0) * 0.01;
            }
        }
        let out = pca_visualize(&img);
        for px in 0..16 {
            assert_eq!(out.data[px * 3 + 1], 0.0);
            assert_eq!(out.data[px * 3 + 2], 0.0);
        }
    }

    #[test]
    fn pca_recovers_3d_embedding() {
        // Features are an exact 3D subspace embedded in 8 channels; the top-3
        // reconstruction must be lossless.
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(2);
        let basis: Vec<[f64; 8]> = vec![
            [1.0, 0.5, 0.0, 0.0, -0.3, 0.0, 0.2, 0.0],
            [0.0, 1.0, -0.7, 0.1, 0.0, 0.0, 0.0, 0.4],
            [0.3, 0.0, 0.0, 1.0, 0.0, -0.2, 0.0, 0.0],
        ];
        let mut img = Image::<f64>::zeros(6, 6, 8);
        for px in 0..36 {
            let coeffs = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            for c in 0..8 {
                img.data[px * 8 + c] =
                    coeffs[0] * basis[0][c] + coeffs[1] * basis[1][c] + coeffs[2] * basis[2][c];
            }
        }
        let fit = pca_fit(&[&img]);
        assert_eq!(fit.components.len(), 3);
        // Reconstruction error of the top-3 projection is zero.
        for px in 0..36 {
            let mut recon = fit.mean.clone();
            for comp in &fit.components {
                let mut proj = 0.0;
                for c in 0..8 {
                    proj += (img.data[px * 8 + c] - fit.mean[c]) * comp[c];
                }
                for c in 0..8 {
                    recon[c] += proj * comp[c];
                }
            }
            for c in 0..8 {
                assert!(
                    (recon[c] - img.data[px * 8 + c]).abs() < 1e-9,
                    "px {px} ch {c}"
                );
            }
        }
    }

    #[test]
    fn pca_permutation_equivariance() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(6);
        let mut img = Image::<f64>::zeros(3, 4, 5);
        img.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let out = pca_visualize(&img);
        // Reverse the pixel order.
        let mut rev = Image::<f64>::zeros(3, 4, 5);
        for px in 0..12 {
            for c in 0..5 {
                rev.data[px * 5 + c] = img.data[(11 - px) * 5 + c];
            }
        }
        let out_rev = pca_visualize(&rev);
        for px in 0..12 {
            for c in 0..3 {
                assert!(
                    (out.data[px * 3 + c] - out_rev.data[(11 - px) * 3 + c]).abs() < 1e-12
                );
            }
        }
    }

    #[test]
    fn argmax_ties_take_smaller_class() {
        let mut logits = Image::<f64>::zeros(1, 1, 3);
        *logits.at_mut(0, 0, 1) = 2.0;
        *logits.at_mut(0, 0, 2) = 2.0;
        assert_eq!(argmax_labels(&logits).at(0, 0), 1);
    }
}

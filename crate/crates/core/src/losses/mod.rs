//! Training losses: photometric L1 and D-SSIM, (masked) softmax
//! cross-entropy for labels, and the two KL aggregation regularizers.
//! Every loss returns its scalar value together with the adjoint w.r.t. its
//! differentiable input, so the trainer can chain them through the decoder
//! and rasterizer backward passes.

mod aggregation;
mod ssim;

pub use aggregation::{agg2d_loss, agg3d_loss};
pub use ssim::dssim_loss;

use thiserror::Error;

use crate::image::{Image, LabelMap, IGNORE_LABEL};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image {h}x{w} smaller than the {window}x{window} SSIM window")]
    ImageTooSmall { h: usize, w: usize, window: usize },
    #[error("label {label} out of range for {classes} classes at ({y}, {x})")]
    LabelOutOfRange {
        label: u8,
        classes: usize,
        y: usize,
        x: usize,
    },
    #[error("invalid sample count: {0}")]
    InvalidSampleCount(String),
    #[error("aggregation needs more than k = {k} points, cloud has {n}")]
    TooFewPoints { k: usize, n: usize },
    #[error("non-finite loss: {0}")]
    NonFinite(String),
}

/// Weights of the two aggregation losses in the total.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub a: f64,
    pub b: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { a: 0.5, b: 0.1 }
    }
}

/// Per-step loss values; `ce` is the ground-truth variant on labeled views
/// and the boundary-masked pseudo variant on pseudo-labeled views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l1: f64,
    pub dssim: f64,
    pub ce: f64,
    pub agg2d: f64,
    pub agg3d: f64,
    pub total: f64,
}

/// `total = l1 + dssim + ce + a * agg2d + b * agg3d`.
pub fn total_loss(
    l1: f64,
    dssim: f64,
    ce: f64,
    agg2d: f64,
    agg3d: f64,
    weights: &LossWeights,
) -> Result<LossReport, LossError> {
    for (name, v) in [
        ("l1", l1),
        ("dssim", dssim),
        ("ce", ce),
        ("agg2d", agg2d),
        ("agg3d", agg3d),
    ] {
        if !v.is_finite() {
            return Err(LossError::NonFinite(format!("{name} = {v}")));
        }
    }
    Ok(LossReport {
        l1,
        dssim,
        ce,
        agg2d,
        agg3d,
        total: l1 + dssim + ce + weights.a * agg2d + weights.b * agg3d,
    })
}

/// Mean absolute difference over all entries; the subgradient at exact ties
/// is zero.
pub fn l1_loss<T: Scalar>(
    rendered: &Image<T>,
    target: &Image<T>,
) -> Result<(T, Image<T>), LossError> {
    if !rendered.same_shape(target) {
        return Err(LossError::ShapeMismatch(format!(
            "l1: {}x{}x{} vs {}x{}x{}",
            rendered.h, rendered.w, rendered.c, target.h, target.w, target.c
        )));
    }
    let n = T::from_usize(rendered.data.len()).unwrap();
    let inv = T::one() / n;
    let mut adjoint = Image::zeros(rendered.h, rendered.w, rendered.c);
    let mut acc = T::zero();
    for ((r, t), g) in rendered
        .data
        .iter()
        .zip(&target.data)
        .zip(adjoint.data.iter_mut())
    {
        let d = *r - *t;
        acc += d.abs();
        *g = if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
    Ok((acc * inv, adjoint))
}

/// Mean softmax cross-entropy over scored pixels. A pixel is scored when the
/// mask (if any) is 1 and its label is not the ignore value; zero scored
/// pixels yield a zero loss with a zero adjoint.
pub fn ce_loss<T: Scalar>(
    logits: &Image<T>,
    labels: &LabelMap,
    mask: Option<&LabelMap>,
) -> Result<(T, Image<T>), LossError> {
    if logits.h != labels.h || logits.w != labels.w {
        return Err(LossError::ShapeMismatch(format!(
            "ce: logits {}x{} vs labels {}x{}",
            logits.h, logits.w, labels.h, labels.w
        )));
    }
    if let Some(m) = mask {
        if !m.same_shape(labels) {
            return Err(LossError::ShapeMismatch(format!(
                "ce: mask {}x{} vs labels {}x{}",
                m.h, m.w, labels.h, labels.w
            )));
        }
    }
    let classes = logits.c;
    let mut scored = 0usize;
    for y in 0..logits.h {
        for x in 0..logits.w {
            if let Some(m) = mask {
                if m.at(y, x) == 0 {
                    continue;
                }
            }
            let label = labels.at(y, x);
            if label == IGNORE_LABEL {
                continue;
            }
            if label as usize >= classes {
                return Err(LossError::LabelOutOfRange {
                    label,
                    classes,
                    y,
                    x,
                });
            }
            scored += 1;
        }
    }
    let mut adjoint = Image::zeros(logits.h, logits.w, classes);
    if scored == 0 {
        return Ok((T::zero(), adjoint));
    }
    let inv = T::one() / T::from_usize(scored).unwrap();
    let mut acc = T::zero();
    for y in 0..logits.h {
        for x in 0..logits.w {
            if let Some(m) = mask {
                if m.at(y, x) == 0 {
                    continue;
                }
            }
            let label = labels.at(y, x);
            if label == IGNORE_LABEL {
                continue;
            }
            let z = logits.pixel(y, x);
            let zmax = z.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let sum_exp: T = z.iter().map(|&v| (v - zmax).exp()).sum();
            let lse = zmax + sum_exp.ln();
            acc += lse - z[label as usize];
            let grad = adjoint.pixel_mut(y, x);
            for (c, g) in grad.iter_mut().enumerate() {
                let softmax = (z[c] - lse).exp();
                let onehot = if c == label as usize { T::one() } else { T::zero() };
                *g = (softmax - onehot) * inv;
            }
        }
    }
    Ok((acc * inv, adjoint))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_identity_and_constant() {
        let a = Image::from_vec(2, 2, 1, vec![0.1f64, 0.2, 0.3, 0.4]);
        let (loss, _) = l1_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);

        let b = Image::from_vec(2, 2, 1, vec![0.6, 0.7, 0.8, 0.9]);
        let (loss, adj) = l1_loss(&a, &b).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
        assert!(adj.data.iter().all(|&g| g == -0.25));
    }

    #[test]
    fn l1_matches_elementwise_oracle() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(8);
        let data_a: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..1.0)).collect();
        let data_b: Vec<f64> = (0..48).map(|_| rng.gen_range(0.0..1.0)).collect();
        let want = data_a
            .iter()
            .zip(&data_b)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 48.0;
        let a = Image::from_vec(4, 4, 3, data_a);
        let b = Image::from_vec(4, 4, 3, data_b);
        let (loss, _) = l1_loss(&a, &b).unwrap();
        assert!((loss - want).abs() < 1e-15);
    }

    #[test]
    fn ce_uniform_logits() {
        let logits = Image::<f64>::zeros(2, 2, 4);
        let labels = LabelMap::filled(2, 2, 1);
        let (loss, _) = ce_loss(&logits, &labels, None).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_saturated_correct_prediction() {
        let mut logits = Image::zeros(1, 1, 3);
        *logits.at_mut(0, 0, 2) = 1e4;
        let labels = LabelMap::filled(1, 1, 2);
        let (loss, _) = ce_loss::<f64>(&logits, &labels, None).unwrap();
        assert!(loss < 1e-3);
    }

    #[test]
    fn ce_empty_mask_is_zero() {
        let logits = Image::zeros(2, 2, 3);
        let labels = LabelMap::filled(2, 2, 1);
        let mask = LabelMap::filled(2, 2, 0);
        let (loss, adj) = ce_loss::<f64>(&logits, &labels, Some(&mask)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(adj.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ce_ignore_pixels_are_skipped() {
        let mut logits = Image::zeros(1, 2, 2);
        *logits.at_mut(0, 0, 0) = 3.0;
        let mut labels = LabelMap::filled(1, 2, 0);
        labels.set(0, 1, IGNORE_LABEL);
        let (loss, adj) = ce_loss::<f64>(&logits, &labels, None).unwrap();
        let want = (1.0 + (-3.0f64).exp()).ln();
        assert!((loss - want).abs() < 1e-12);
        assert_eq!(adj.pixel(0, 1), &[0.0, 0.0]);
    }

    #[test]
    fn ce_label_out_of_range() {
        let logits = Image::zeros(1, 1, 2);
        let labels = LabelMap::filled(1, 1, 5);
        assert!(matches!(
            ce_loss::<f64>(&logits, &labels, None),
            Err(LossError::LabelOutOfRange { label: 5, .. })
        ));
    }

    #[test]
    fn total_loss_weighted() {
        let w = LossWeights { a: 0.5, b: 0.1 };
        let r = total_loss(1.0, 1.0, 1.0, 1.0, 1.0, &w).unwrap();
        assert!((r.total - 3.6).abs() < 1e-12);

        let zero = total_loss(0.0, 0.0, 0.0, 0.0, 0.0, &w).unwrap();
        assert_eq!(zero.total, 0.0);

        let off = LossWeights { a: 0.0, b: 0.0 };
        let r1 = total_loss(0.2, 0.3, 0.4, 123.0, -55.0, &off).unwrap();
        let r2 = total_loss(0.2, 0.3, 0.4, 0.0, 0.0, &off).unwrap();
        assert_eq!(r1.total, r2.total);
    }

    #[test]
    fn total_loss_rejects_non_finite() {
        let w = LossWeights::default();
        assert!(matches!(
            total_loss(f64::NAN, 0.0, 0.0, 0.0, 0.0, &w),
            Err(LossError::NonFinite(_))
        ));
    }
}

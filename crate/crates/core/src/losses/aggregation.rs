//! KL aggregation regularizers pulling the feature distributions of nearby
//! pixels (2D) or nearby cloud points (3D) together.
//!
//! Raw features are turned into channel distributions by a softmax; each
//! sampled anchor is compared to its k nearest neighbors with
//! `KL(anchor || neighbor)` and the mean over all `m * k` pairs is the loss.
//! Anchor sampling is seeded and bitwise reproducible.

use rand::rngs::StdRng;
use rand::SeedableRng;

use super::LossError;
use crate::cloud::GaussianCloud;
use crate::image::Image;
use crate::spatial::SpatialIndex;
use crate::Scalar;

/// Softmax + log-softmax of one feature vector.
fn softmax_ln<T: Scalar>(z: &[T], p: &mut [T], ln_p: &mut [T]) {
    let zmax = z.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut sum = T::zero();
    for (e, &v) in p.iter_mut().zip(z) {
        *e = (v - zmax).exp();
        sum += *e;
    }
    let lse = zmax + sum.ln();
    for ((pv, lv), &v) in p.iter_mut().zip(ln_p.iter_mut()).zip(z) {
        *pv = *pv / sum;
        *lv = v - lse;
    }
}

/// One anchor/neighbor pair: returns the (nonnegative) KL value and adds the
/// pair's gradients into the two raw-feature adjoint slices.
fn kl_pair<T: Scalar>(
    p: &[T],
    ln_p: &[T],
    q: &[T],
    ln_q: &[T],
    scale: T,
    grad_anchor: &mut [T],
    grad_neighbor: &mut [T],
) -> T {
    let mut kl = T::zero();
    for c in 0..p.len() {
        kl += p[c] * (ln_p[c] - ln_q[c]);
    }
    if kl <= T::zero() {
        // Distributions identical up to rounding; clamp to the exact zero of
        // the identity case and skip the (equally tiny) gradients.
        return T::zero();
    }
    for c in 0..p.len() {
        grad_anchor[c] += scale * p[c] * (ln_p[c] - ln_q[c] - kl);
        grad_neighbor[c] += scale * (q[c] - p[c]);
    }
    kl
}

/// The k nearest grid pixels to `(ay, ax)` (excluding itself) by Euclidean
/// distance, ties broken by ascending row-major index.
fn grid_knn(h: usize, w: usize, ay: usize, ax: usize, k: usize) -> Vec<(usize, usize)> {
    let mut radius = 2usize;
    loop {
        // All cells within a Chebyshev box of `radius`; any cell outside has
        // Euclidean distance > radius, so once k candidates sit within
        // `radius` the answer is exact.
        let y0 = ay.saturating_sub(radius);
        let y1 = (ay + radius).min(h - 1);
        let x0 = ax.saturating_sub(radius);
        let x1 = (ax + radius).min(w - 1);
        let mut cands: Vec<(u64, usize)> = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                if y == ay && x == ax {
                    continue;
                }
                let dy = y.abs_diff(ay) as u64;
                let dx = x.abs_diff(ax) as u64;
                cands.push((dy * dy + dx * dx, y * w + x));
            }
        }
        cands.sort_unstable();
        let r2 = (radius * radius) as u64;
        if cands.len() >= k && cands[k - 1].0 <= r2 {
            return cands[..k].iter().map(|&(_, i)| (i / w, i % w)).collect();
        }
        if cands.len() >= (h * w - 1) {
            // Entire grid scanned; return the best k that exist.
            return cands
                .iter()
                .take(k)
                .map(|&(_, i)| (i / w, i % w))
                .collect();
        }
        radius *= 2;
    }
}

/// 2D aggregation loss over a rendered feature map.
///
/// Samples `m` anchor pixels without replacement, compares each anchor's
/// channel distribution to those of its `k` nearest grid pixels, and returns
/// the mean KL plus the adjoint w.r.t. the raw feature map.
pub fn agg2d_loss<T: Scalar>(
    feature_map: &Image<T>,
    m: usize,
    k: usize,
    seed: u64,
) -> Result<(T, Image<T>), LossError> {
    let (h, w) = (feature_map.h, feature_map.w);
    let pixels = h * w;
    if m < 1 || k < 1 {
        return Err(LossError::InvalidSampleCount(format!(
            "m = {m}, k = {k}; both must be at least 1"
        )));
    }
    if m * (k + 1) > pixels {
        return Err(LossError::InvalidSampleCount(format!(
            "m * (k + 1) = {} exceeds the {pixels} available pixels",
            m * (k + 1)
        )));
    }
    let channels = feature_map.c;
    let mut rng = StdRng::seed_from_u64(seed);
    let anchors = rand::seq::index::sample(&mut rng, pixels, m);

    let mut adjoint = Image::zeros(h, w, channels);
    let scale = T::one() / T::from_usize(m * k).unwrap();
    let mut p = vec![T::zero(); channels];
    let mut ln_p = vec![T::zero(); channels];
    let mut q = vec![T::zero(); channels];
    let mut ln_q = vec![T::zero(); channels];
    let mut grad_a = vec![T::zero(); channels];

    let mut acc = T::zero();
    for a in anchors.iter() {
        let (ay, ax) = (a / w, a % w);
        softmax_ln(feature_map.pixel(ay, ax), &mut p, &mut ln_p);
        grad_a.fill(T::zero());
        for (ny, nx) in grid_knn(h, w, ay, ax, k) {
            softmax_ln(feature_map.pixel(ny, nx), &mut q, &mut ln_q);
            acc += kl_pair(
                &p,
                &ln_p,
                &q,
                &ln_q,
                scale,
                &mut grad_a,
                adjoint.pixel_mut(ny, nx),
            );
        }
        for (g, add) in adjoint.pixel_mut(ay, ax).iter_mut().zip(&grad_a) {
            *g += *add;
        }
    }
    Ok((acc * scale, adjoint))
}

/// 3D aggregation loss over cloud point features.
///
/// Samples `m` points without replacement (clamped to the cloud size),
/// finds each sample's `k` nearest neighbors through the spatial index, and
/// applies the same softmax-KL as the 2D loss. Gradients flow to features
/// only; positions are constants here. The returned adjoint matches the
/// layout of `cloud.features`.
pub fn agg3d_loss<T: Scalar>(
    cloud: &GaussianCloud<T>,
    index: &SpatialIndex<T>,
    m: usize,
    k: usize,
    seed: u64,
) -> Result<(T, Vec<T>), LossError> {
    let n = cloud.len();
    if n <= k {
        return Err(LossError::TooFewPoints { k, n });
    }
    if m < 1 || k < 1 {
        return Err(LossError::InvalidSampleCount(format!(
            "m = {m}, k = {k}; both must be at least 1"
        )));
    }
    let m_eff = m.min(n);
    let channels = cloud.feature_dim;
    let mut rng = StdRng::seed_from_u64(seed);
    let anchors = rand::seq::index::sample(&mut rng, n, m_eff);

    let mut adjoint = vec![T::zero(); cloud.features.len()];
    let scale = T::one() / T::from_usize(m_eff * k).unwrap();
    let mut p = vec![T::zero(); channels];
    let mut ln_p = vec![T::zero(); channels];
    let mut q = vec![T::zero(); channels];
    let mut ln_q = vec![T::zero(); channels];
    let mut grad_a = vec![T::zero(); channels];

    let mut acc = T::zero();
    for a in anchors.iter() {
        softmax_ln(cloud.feature_of(a), &mut p, &mut ln_p);
        grad_a.fill(T::zero());
        let neighbors = index
            .knn(cloud.positions[a], k, Some(a))
            .map_err(|_| LossError::TooFewPoints { k, n })?;
        for nb in neighbors {
            softmax_ln(cloud.feature_of(nb), &mut q, &mut ln_q);
            acc += kl_pair(
                &p,
                &ln_p,
                &q,
                &ln_q,
                scale,
                &mut grad_a,
                &mut adjoint[nb * channels..(nb + 1) * channels],
            );
        }
        for (g, add) in adjoint[a * channels..(a + 1) * channels]
            .iter_mut()
            .zip(&grad_a)
        {
            *g += *add;
        }
    }
    Ok((acc * scale, adjoint))
}

//! Differentiable splatting: 3D Gaussians are projected to a view,
//! depth-sorted, and alpha-blended front to back. Color and semantic
//! features share one blending pass and one set of geometry attributes.
//!
//! The backward pass replays the per-pixel blending from the contributor
//! records stored during the forward pass and chains gradients through the
//! blending weights, the 2D Gaussian evaluation, the covariance projection,
//! the perspective projection, and the spherical-harmonic color.

mod backward;
mod forward;

pub use backward::render_backward;
pub use forward::render;

use thiserror::Error;

use crate::camera::{world_to_camera, Intrinsics, Pose, DEFAULT_NEAR};
use crate::cloud::{covariance_3d, GaussianCloud};
use crate::image::Image;
use crate::math::{self, inv22, mat23_mul33, sandwich23, sc, M22, M23, V2, V3};
use crate::Scalar;

/// Low-pass regularizer added to both diagonal entries of every projected
/// covariance, in px^2; keeps sub-pixel splats well-conditioned.
pub const LOW_PASS: f64 = 0.3;

/// Per-splat opacity contribution is clamped to this value so transmittance
/// never reaches zero.
pub const ALPHA_CLAMP: f64 = 0.99;

/// A splat contributes to the pixels inside its 3-sigma ellipse.
pub const FOOTPRINT_SIGMA: f64 = 3.0;

/// Front-to-back blending stops once transmittance drops below this.
pub const EARLY_STOP_TRANSMITTANCE: f64 = 1e-4;

/// Splats whose projected mean lies outside the image bounds by more than
/// this multiple of the image extent are culled.
pub const CULL_MARGIN: f64 = 1.3;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("degenerate 2D covariance, det = {det:.3e}; regularization failed")]
    DegenerateCovariance { det: f64 },
    #[error("adjoint shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
}

/// A Gaussian after projection into one view, in pixel units.
///
/// `source_index` points back into the cloud; the semantic feature vector is
/// looked up there since it is view-independent.
#[derive(Debug, Clone)]
pub struct Projected2DGaussian<T> {
    pub mean2d: V2<T>,
    pub cov2d: M22<T>,
    pub depth: T,
    /// SH color evaluated for this view, clamped to [0, 1].
    pub color: [T; 3],
    /// Activated opacity, sigmoid of the stored logit.
    pub opacity: T,
    pub source_index: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// 1 forces the fully sequential path; anything else uses the ambient
    /// rayon pool.
    pub threads: usize,
    pub tile_size: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            threads: 0,
            tile_size: 16,
        }
    }
}

/// Per-pixel contributor records in compressed sparse rows: for pixel `p`,
/// `indices[offsets[p]..offsets[p+1]]` are splat indices in blend order.
#[derive(Debug, Clone, Default)]
pub struct Contributors {
    pub offsets: Vec<u32>,
    pub indices: Vec<u32>,
}

impl Contributors {
    #[inline]
    pub fn pixel(&self, p: usize) -> &[u32] {
        &self.indices[self.offsets[p] as usize..self.offsets[p + 1] as usize]
    }
}

/// Forward-pass products kept for the backward pass: blended images plus the
/// depth-sorted splat list and per-pixel contributor records.
#[derive(Debug, Clone)]
pub struct RenderOutput<T> {
    /// H x W x 3, in [0, 1].
    pub color: Image<T>,
    /// H x W x feature_dim.
    pub features: Image<T>,
    /// H x W x 1, sum of blending weights per pixel.
    pub alpha: Image<T>,
    /// Depth-sorted splats this image was blended from.
    pub splats: Vec<Projected2DGaussian<T>>,
    /// Per pixel, indices into `splats` in blend order.
    pub contributors: Contributors,
    /// Blend-time alpha of each contributor, aligned with
    /// `contributors.indices`; lets the backward pass replay the chain
    /// without re-evaluating the Gaussians.
    pub contrib_alphas: Vec<T>,
}

/// Gradients w.r.t. every cloud attribute, plus the screen-space positional
/// gradient used by the densification heuristic.
#[derive(Debug, Clone)]
pub struct GradientBundle<T> {
    pub positions: Vec<V3<T>>,
    pub rotations: Vec<[T; 4]>,
    pub log_scales: Vec<V3<T>>,
    pub opacity_logits: Vec<T>,
    pub sh_coeffs: Vec<T>,
    pub features: Vec<T>,
    /// d(loss)/d(projected 2D mean) per point, for densification statistics.
    pub mean2d: Vec<V2<T>>,
}

impl<T: Scalar> GradientBundle<T> {
    pub fn zeros_like(cloud: &GaussianCloud<T>) -> Self {
        let n = cloud.len();
        Self {
            positions: vec![[T::zero(); 3]; n],
            rotations: vec![[T::zero(); 4]; n],
            log_scales: vec![[T::zero(); 3]; n],
            opacity_logits: vec![T::zero(); n],
            sh_coeffs: vec![T::zero(); cloud.sh_coeffs.len()],
            features: vec![T::zero(); cloud.features.len()],
            mean2d: vec![[T::zero(); 2]; n],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.positions.iter_mut().zip(&other.positions) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.rotations.iter_mut().zip(&other.rotations) {
            for k in 0..4 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.log_scales.iter_mut().zip(&other.log_scales) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *a += *b;
        }
        for (a, b) in self.sh_coeffs.iter_mut().zip(&other.sh_coeffs) {
            *a += *b;
        }
        for (a, b) in self.features.iter_mut().zip(&other.features) {
            *a += *b;
        }
        for (a, b) in self.mean2d.iter_mut().zip(&other.mean2d) {
            for k in 0..2 {
                a[k] += b[k];
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self
            .positions
            .iter_mut()
            .flatten()
            .chain(self.rotations.iter_mut().flatten())
            .chain(self.log_scales.iter_mut().flatten())
            .chain(self.opacity_logits.iter_mut())
            .chain(self.sh_coeffs.iter_mut())
            .chain(self.features.iter_mut())
            .chain(self.mean2d.iter_mut().flatten())
        {
            *v *= s;
        }
    }
}

/// Projects every cloud point into the view. Points behind the near plane or
/// far outside the image are culled; survivors carry their screen-space
/// Gaussian, depth, view-evaluated color, and activated opacity.
pub fn project<T: Scalar>(
    cloud: &GaussianCloud<T>,
    k: &Intrinsics<T>,
    pose: &Pose<T>,
) -> Vec<Projected2DGaussian<T>> {
    let near = sc::<T>(DEFAULT_NEAR);
    let w = T::from_u32(k.width).unwrap();
    let h = T::from_u32(k.height).unwrap();
    let margin_x = sc::<T>(CULL_MARGIN) * w;
    let margin_y = sc::<T>(CULL_MARGIN) * h;
    let lam = sc::<T>(LOW_PASS);
    let cam_center = pose.camera_center();

    let mut out = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let pc = world_to_camera(cloud.positions[i], pose);
        let z = pc[2];
        if z <= near {
            continue;
        }
        let u = k.fx * pc[0] / z + k.u0;
        let v = k.fy * pc[1] / z + k.v0;
        if u < -margin_x || u > w + margin_x || v < -margin_y || v > h + margin_y {
            continue;
        }

        let jac = projection_jacobian_unchecked(pc, k);
        let m = mat23_mul33(&jac, &pose.rot);
        let sigma3d = covariance_3d(cloud.rotations[i], cloud.log_scales[i]);
        let mut cov2d = sandwich23(&m, &sigma3d);
        cov2d[0][0] += lam;
        cov2d[1][1] += lam;

        let dir = math::normalize3(math::sub3(cloud.positions[i], cam_center));
        let color = eval_sh_color(cloud, i, dir);

        out.push(Projected2DGaussian {
            mean2d: [u, v],
            cov2d,
            depth: z,
            color,
            opacity: math::sigmoid(cloud.opacity_logits[i]),
            source_index: i,
        });
    }
    out
}

/// `projection_jacobian` without the near-plane recheck; callers guarantee
/// `pc[2] > near`.
#[inline]
pub(crate) fn projection_jacobian_unchecked<T: Scalar>(pc: V3<T>, k: &Intrinsics<T>) -> M23<T> {
    let z = pc[2];
    let z2 = z * z;
    let zero = T::zero();
    [
        [k.fx / z, zero, -k.fx * pc[0] / z2],
        [zero, k.fy / z, -k.fy * pc[1] / z2],
    ]
}

/// SH color for point `i` seen from direction `dir`, clamped to [0, 1].
#[inline]
pub(crate) fn eval_sh_color<T: Scalar>(
    cloud: &GaussianCloud<T>,
    i: usize,
    dir: V3<T>,
) -> [T; 3] {
    let basis = math::sh::eval_basis(cloud.sh_degree, dir);
    let nb = math::sh::basis_count(cloud.sh_degree);
    let sh = cloud.sh_of(i);
    let half = sc::<T>(0.5);
    let mut color = [T::zero(); 3];
    for (ch, c) in color.iter_mut().enumerate() {
        let mut acc = half;
        for (b, &bv) in basis.iter().take(nb).enumerate() {
            acc += bv * sh[b * 3 + ch];
        }
        *c = acc.max(T::zero()).min(T::one());
    }
    color
}

/// Sorts splats by ascending depth, ties broken by ascending source index.
pub fn depth_sort<T: Scalar>(mut splats: Vec<Projected2DGaussian<T>>) -> Vec<Projected2DGaussian<T>> {
    splats.sort_unstable_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .expect("splat depths are finite")
            .then(a.source_index.cmp(&b.source_index))
    });
    splats
}

/// Opacity contribution of one splat at a pixel:
/// `min(opacity * exp(-0.5 * d^T cov2d^-1 d), 0.99)`.
pub fn alpha_at<T: Scalar>(splat: &Projected2DGaussian<T>, pixel: V2<T>) -> Result<T, RasterError> {
    let det = math::det22(&splat.cov2d);
    if det.as_f64() < 1e-12 {
        return Err(RasterError::DegenerateCovariance { det: det.as_f64() });
    }
    let conic = inv22(&splat.cov2d);
    let d = [pixel[0] - splat.mean2d[0], pixel[1] - splat.mean2d[1]];
    let m = mahalanobis2(&conic, d);
    Ok((splat.opacity * (-m * sc::<T>(0.5)).exp()).min(sc(ALPHA_CLAMP)))
}

#[inline]
pub(crate) fn mahalanobis2<T: Scalar>(conic: &M22<T>, d: V2<T>) -> T {
    conic[0][0] * d[0] * d[0]
        + (conic[0][1] + conic[1][0]) * d[0] * d[1]
        + conic[1][1] * d[1] * d[1]
}

/// Splat bounding box in pixel indices, conservative for the 3-sigma
/// ellipse. Returns None when the box misses the image.
pub(crate) fn splat_bbox<T: Scalar>(
    splat: &Projected2DGaussian<T>,
    width: usize,
    height: usize,
) -> Option<(usize, usize, usize, usize)> {
    let r = sc::<T>(FOOTPRINT_SIGMA) * math::max_eig22(&splat.cov2d).max(T::zero()).sqrt();
    let half = sc::<T>(0.5);
    let x0 = (splat.mean2d[0] - r - half).ceil().as_f64();
    let x1 = (splat.mean2d[0] + r - half).floor().as_f64();
    let y0 = (splat.mean2d[1] - r - half).ceil().as_f64();
    let y1 = (splat.mean2d[1] + r - half).floor().as_f64();
    if x1 < 0.0 || y1 < 0.0 || x0 > (width - 1) as f64 || y0 > (height - 1) as f64 {
        return None;
    }
    Some((
        x0.max(0.0) as usize,
        x1.min((width - 1) as f64) as usize,
        y0.max(0.0) as usize,
        y1.min((height - 1) as f64) as usize,
    ))
}

pub(crate) struct PreparedSplat<T> {
    pub conic: M22<T>,
    pub bbox: Option<(usize, usize, usize, usize)>,
}

pub(crate) fn prepare_splats<T: Scalar>(
    splats: &[Projected2DGaussian<T>],
    width: usize,
    height: usize,
) -> Vec<PreparedSplat<T>> {
    splats
        .iter()
        .map(|s| PreparedSplat {
            conic: inv22(&s.cov2d),
            bbox: splat_bbox(s, width, height),
        })
        .collect()
}

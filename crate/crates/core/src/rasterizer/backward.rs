//! Analytic backward pass through the splatting forward model.
//!
//! Stage one replays each pixel's blending from the stored contributor
//! records and accumulates screen-space gradients per splat (color, feature,
//! 2D mean, 2D covariance, opacity). Stage two chains those through the
//! covariance projection, perspective projection, rotation/scale
//! parameterization, and spherical harmonics into cloud-attribute gradients.

use rayon::prelude::*;

use super::{
    projection_jacobian_unchecked, GradientBundle, Projected2DGaussian, RasterError,
    RenderOptions, RenderOutput, ALPHA_CLAMP,
};
use crate::camera::{world_to_camera, Intrinsics, Pose};
use crate::cloud::{covariance_3d, GaussianCloud, LOG_SCALE_MAX, LOG_SCALE_MIN};
use crate::image::Image;
use crate::math::{
    self, inv22, mat22_mul23, mat23_mul33, mat33_mul, mat33_t, mat33_vec3, quat_normalize,
    quat_to_rot, quat_to_rot_jacobian, sandwich23_t, sc, M22, M33,
};
use crate::Scalar;

/// Screen-space gradient accumulators, indexed like the sorted splat list.
struct ScreenGrads<T> {
    d_color: Vec<[T; 3]>,
    d_feature: Vec<T>,
    d_mean2d: Vec<[T; 2]>,
    d_cov2d: Vec<M22<T>>,
    d_opacity: Vec<T>,
}

impl<T: Scalar> ScreenGrads<T> {
    fn zeros(splats: usize, fdim: usize) -> Self {
        Self {
            d_color: vec![[T::zero(); 3]; splats],
            d_feature: vec![T::zero(); splats * fdim],
            d_mean2d: vec![[T::zero(); 2]; splats],
            d_cov2d: vec![[[T::zero(); 2]; 2]; splats],
            d_opacity: vec![T::zero(); splats],
        }
    }

    fn add_assign(mut self, other: Self) -> Self {
        for (a, b) in self.d_color.iter_mut().zip(&other.d_color) {
            for kk in 0..3 {
                a[kk] += b[kk];
            }
        }
        for (a, b) in self.d_feature.iter_mut().zip(&other.d_feature) {
            *a += *b;
        }
        for (a, b) in self.d_mean2d.iter_mut().zip(&other.d_mean2d) {
            for kk in 0..2 {
                a[kk] += b[kk];
            }
        }
        for (a, b) in self.d_cov2d.iter_mut().zip(&other.d_cov2d) {
            for i in 0..2 {
                for j in 0..2 {
                    a[i][j] += b[i][j];
                }
            }
        }
        for (a, b) in self.d_opacity.iter_mut().zip(&other.d_opacity) {
            *a += *b;
        }
        self
    }
}

/// Gradients of a scalar loss w.r.t. every cloud attribute, given adjoints
/// of the rendered color image and feature map. Points that contributed to
/// no pixel get zero gradient.
pub fn render_backward<T: Scalar>(
    cloud: &GaussianCloud<T>,
    k: &Intrinsics<T>,
    pose: &Pose<T>,
    output: &RenderOutput<T>,
    dl_dcolor: &Image<T>,
    dl_dfeature: &Image<T>,
    opts: &RenderOptions,
) -> Result<GradientBundle<T>, RasterError> {
    let (h, w) = (output.color.h, output.color.w);
    let fdim = cloud.feature_dim;
    if dl_dcolor.h != h || dl_dcolor.w != w || dl_dcolor.c != 3 {
        return Err(RasterError::ShapeMismatch {
            expected: format!("{h}x{w}x3"),
            got: format!("{}x{}x{}", dl_dcolor.h, dl_dcolor.w, dl_dcolor.c),
        });
    }
    if dl_dfeature.h != h || dl_dfeature.w != w || dl_dfeature.c != fdim {
        return Err(RasterError::ShapeMismatch {
            expected: format!("{h}x{w}x{fdim}"),
            got: format!("{}x{}x{}", dl_dfeature.h, dl_dfeature.w, dl_dfeature.c),
        });
    }

    let splats = &output.splats;
    let conics: Vec<M22<T>> = splats.iter().map(|s| inv22(&s.cov2d)).collect();

    let row_pass = |mut acc: ScreenGrads<T>, y: usize| -> ScreenGrads<T> {
        let mut suffix_f = vec![T::zero(); fdim];
        for x in 0..w {
            let p = y * w + x;
            let lo = output.contributors.offsets[p] as usize;
            let hi = output.contributors.offsets[p + 1] as usize;
            if lo == hi {
                continue;
            }
            let ac = dl_dcolor.pixel(y, x);
            let af = dl_dfeature.pixel(y, x);
            if ac.iter().chain(af.iter()).all(|v| *v == T::zero()) {
                continue;
            }
            accumulate_pixel(
                x,
                y,
                &output.contributors.indices[lo..hi],
                &output.contrib_alphas[lo..hi],
                splats,
                &conics,
                cloud,
                ac,
                af,
                &mut acc,
                &mut suffix_f,
            );
        }
        acc
    };

    let screen = if opts.threads == 1 {
        (0..h).fold(ScreenGrads::zeros(splats.len(), fdim), row_pass)
    } else {
        (0..h)
            .into_par_iter()
            .fold(|| ScreenGrads::zeros(splats.len(), fdim), row_pass)
            .reduce(
                || ScreenGrads::zeros(splats.len(), fdim),
                ScreenGrads::add_assign,
            )
    };

    Ok(chain_to_cloud(cloud, k, pose, splats, screen))
}

/// Replays the blend at one pixel from the stored alphas and accumulates
/// screen-space gradients.
#[allow(clippy::too_many_arguments)]
fn accumulate_pixel<T: Scalar>(
    x: usize,
    y: usize,
    contributors: &[u32],
    alphas: &[T],
    splats: &[Projected2DGaussian<T>],
    conics: &[M22<T>],
    cloud: &GaussianCloud<T>,
    ac: &[T],
    af: &[T],
    acc: &mut ScreenGrads<T>,
    suffix_f: &mut [T],
) {
    let half = sc::<T>(0.5);
    let clamp = sc::<T>(ALPHA_CLAMP);
    let cx = T::from_usize(x).unwrap() + half;
    let cy = T::from_usize(y).unwrap() + half;
    let fdim = suffix_f.len();

    // Transmittance in front of each contributor, rebuilt with the same
    // arithmetic as the forward pass.
    let mut trans_chain = [T::zero(); 256];
    let mut trans_heap;
    let trans: &mut [T] = if contributors.len() <= 256 {
        &mut trans_chain[..contributors.len()]
    } else {
        trans_heap = vec![T::zero(); contributors.len()];
        &mut trans_heap
    };
    let mut transmittance = T::one();
    for (t, &alpha) in trans.iter_mut().zip(alphas) {
        *t = transmittance;
        transmittance *= T::one() - alpha;
    }

    // Reverse sweep with suffix sums of downstream blended color/features.
    let mut suffix_c = [T::zero(); 3];
    suffix_f.fill(T::zero());
    for idx in (0..contributors.len()).rev() {
        let si = contributors[idx] as usize;
        let s = &splats[si];
        let alpha = alphas[idx];
        let trans = trans[idx];
        let weight = alpha * trans;
        let feat = cloud.feature_of(s.source_index);

        let inv_rest = T::one() / (T::one() - alpha);
        let mut d_alpha = T::zero();
        for ch in 0..3 {
            acc.d_color[si][ch] += weight * ac[ch];
            d_alpha += ac[ch] * (trans * s.color[ch] - suffix_c[ch] * inv_rest);
            suffix_c[ch] += weight * s.color[ch];
        }
        // One fused pass over the channels: adjoint accumulation, the two
        // d_alpha dot products (against the suffix BEFORE this splat joins
        // it), and the suffix update. Four lanes keep it vectorizable.
        let dfs = &mut acc.d_feature[si * fdim..(si + 1) * fdim];
        let mut dot_feat = [T::zero(); 4];
        let mut dot_suf = [T::zero(); 4];
        let lanes = fdim / 4 * 4;
        for f4 in (0..lanes).step_by(4) {
            for l in 0..4 {
                let f = f4 + l;
                let a = af[f];
                let sf = feat[f];
                dfs[f] += weight * a;
                dot_feat[l] += a * sf;
                dot_suf[l] += a * suffix_f[f];
                suffix_f[f] += weight * sf;
            }
        }
        let mut tail_feat = T::zero();
        let mut tail_suf = T::zero();
        for f in lanes..fdim {
            let a = af[f];
            let sf = feat[f];
            dfs[f] += weight * a;
            tail_feat += a * sf;
            tail_suf += a * suffix_f[f];
            suffix_f[f] += weight * sf;
        }
        let sum_feat = (dot_feat[0] + dot_feat[1]) + (dot_feat[2] + dot_feat[3]) + tail_feat;
        let sum_suf = (dot_suf[0] + dot_suf[1]) + (dot_suf[2] + dot_suf[3]) + tail_suf;
        d_alpha += trans * sum_feat - inv_rest * sum_suf;

        if alpha < clamp {
            // Unclamped: alpha = opacity * g with g = exp(-m/2).
            let g = alpha / s.opacity;
            acc.d_opacity[si] += d_alpha * g;
            let d_m = d_alpha * alpha * (-half);
            let a = &conics[si];
            let d = [cx - s.mean2d[0], cy - s.mean2d[1]];
            let ad = [
                a[0][0] * d[0] + a[0][1] * d[1],
                a[1][0] * d[0] + a[1][1] * d[1],
            ];
            let two = sc::<T>(2.0);
            acc.d_mean2d[si][0] += d_m * (-two) * ad[0];
            acc.d_mean2d[si][1] += d_m * (-two) * ad[1];
            for i in 0..2 {
                for j in 0..2 {
                    acc.d_cov2d[si][i][j] -= d_m * ad[i] * ad[j];
                }
            }
        }
    }
}

/// Chains screen-space splat gradients into cloud attribute gradients.
fn chain_to_cloud<T: Scalar>(
    cloud: &GaussianCloud<T>,
    k: &Intrinsics<T>,
    pose: &Pose<T>,
    splats: &[Projected2DGaussian<T>],
    screen: ScreenGrads<T>,
) -> GradientBundle<T> {
    let mut bundle = GradientBundle::zeros_like(cloud);
    let fdim = cloud.feature_dim;
    let nb = math::sh::basis_count(cloud.sh_degree);
    let cam_center = pose.camera_center();
    let rot_t = mat33_t(&pose.rot);
    let two = sc::<T>(2.0);

    for (si, splat) in splats.iter().enumerate() {
        let j = splat.source_index;

        // Opacity: sigma = sigmoid(logit).
        let sigma = splat.opacity;
        bundle.opacity_logits[j] += screen.d_opacity[si] * sigma * (T::one() - sigma);

        // Features pass straight through the blend.
        for f in 0..fdim {
            bundle.features[j * fdim + f] += screen.d_feature[si * fdim + f];
        }

        bundle.mean2d[j][0] += screen.d_mean2d[si][0];
        bundle.mean2d[j][1] += screen.d_mean2d[si][1];

        // Geometry chain: cov2d = M sigma3d M^T + lambda I with M = J W.
        let pc = world_to_camera(cloud.positions[j], pose);
        let jac = projection_jacobian_unchecked(pc, k);
        let m23 = mat23_mul33(&jac, &pose.rot);
        let sigma3d = covariance_3d(cloud.rotations[j], cloud.log_scales[j]);

        let g22 = symmetrize22(&screen.d_cov2d[si]);
        let d_sigma3d = sandwich23_t(&m23, &g22);
        let gm = mat22_mul23(&g22, &m23);
        let mut d_m = mat23_mul33(&gm, &sigma3d);
        for row in d_m.iter_mut() {
            for v in row.iter_mut() {
                *v *= two;
            }
        }
        let d_jac = mat23_mul33(&d_m, &rot_t);

        // J's own dependence on the camera-space point.
        let (px, py, z) = (pc[0], pc[1], pc[2]);
        let z2 = z * z;
        let z3 = z2 * z;
        let mut d_pc = [
            d_jac[0][2] * (-k.fx / z2),
            d_jac[1][2] * (-k.fy / z2),
            d_jac[0][0] * (-k.fx / z2)
                + d_jac[1][1] * (-k.fy / z2)
                + d_jac[0][2] * (two * k.fx * px / z3)
                + d_jac[1][2] * (two * k.fy * py / z3),
        ];
        // Projected mean: d(u,v)/d(pc) is exactly J.
        let dm2 = screen.d_mean2d[si];
        for a in 0..3 {
            d_pc[a] += jac[0][a] * dm2[0] + jac[1][a] * dm2[1];
        }
        let d_pos_rigid = mat33_vec3(&rot_t, d_pc);

        // sigma3d = R D R^T with D = diag(exp(2 * clamped log_scale)).
        let qn = quat_normalize(cloud.rotations[j]);
        let r = quat_to_rot(qn);
        let rtpr = mat33_mul(&mat33_t(&r), &mat33_mul(&d_sigma3d, &r));
        let ls = cloud.log_scales[j];
        let mut exps = [T::zero(); 3];
        for a in 0..3 {
            let clamped = ls[a].max(sc(LOG_SCALE_MIN)).min(sc(LOG_SCALE_MAX));
            exps[a] = (two * clamped).exp();
            let inside = ls[a] > sc(LOG_SCALE_MIN) && ls[a] < sc(LOG_SCALE_MAX);
            if inside {
                bundle.log_scales[j][a] += rtpr[a][a] * two * exps[a];
            }
        }

        // dL/dR = 2 P R D, then through the quaternion and its normalization.
        let pr = mat33_mul(&d_sigma3d, &r);
        let mut d_r: M33<T> = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for a in 0..3 {
                d_r[i][a] = two * pr[i][a] * exps[a];
            }
        }
        let jac4 = quat_to_rot_jacobian(qn);
        let mut d_qhat = [T::zero(); 4];
        for (c, slice) in jac4.iter().enumerate() {
            let mut acc = T::zero();
            for i in 0..3 {
                for jj in 0..3 {
                    acc += d_r[i][jj] * slice[i][jj];
                }
            }
            d_qhat[c] = acc;
        }
        let q = cloud.rotations[j];
        let qnorm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if qnorm > T::zero() {
            let dot = d_qhat[0] * qn[0] + d_qhat[1] * qn[1] + d_qhat[2] * qn[2] + d_qhat[3] * qn[3];
            for c in 0..4 {
                bundle.rotations[j][c] += (d_qhat[c] - dot * qn[c]) / qnorm;
            }
        }

        // Color: through the SH basis into coefficients, and through the view
        // direction into the position. Clamped channels block both paths.
        let v = math::sub3(cloud.positions[j], cam_center);
        let dist = math::norm3(v);
        let mut d_pos_dir = [T::zero(); 3];
        if dist > T::zero() {
            let dir = math::scale3(v, T::one() / dist);
            let (basis, basis_grad) = math::sh::eval_basis_grad(cloud.sh_degree, dir);
            let sh = cloud.sh_of(j);
            let half = sc::<T>(0.5);
            let mut d_dir = [T::zero(); 3];
            for ch in 0..3 {
                let dc = screen.d_color[si][ch];
                if dc == T::zero() {
                    continue;
                }
                let mut raw = half;
                for b in 0..nb {
                    raw += basis[b] * sh[b * 3 + ch];
                }
                if raw <= T::zero() || raw >= T::one() {
                    continue;
                }
                for b in 0..nb {
                    bundle.sh_coeffs[j * 3 * nb + b * 3 + ch] += dc * basis[b];
                    for a in 0..3 {
                        d_dir[a] += dc * sh[b * 3 + ch] * basis_grad[b][a];
                    }
                }
            }
            let ddot = math::dot3(d_dir, dir);
            for a in 0..3 {
                d_pos_dir[a] = (d_dir[a] - ddot * dir[a]) / dist;
            }
        }

        for a in 0..3 {
            bundle.positions[j][a] += d_pos_rigid[a] + d_pos_dir[a];
        }
    }
    bundle
}

#[inline]
fn symmetrize22<T: Scalar>(m: &M22<T>) -> M22<T> {
    let half = sc::<T>(0.5);
    [
        [m[0][0], (m[0][1] + m[1][0]) * half],
        [(m[0][1] + m[1][0]) * half, m[1][1]],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::SparsePoint;
    use crate::cloud::init_from_points;
    use crate::rasterizer::render;

    #[test]
    fn zero_adjoints_give_zero_bundle() {
        let pts: Vec<SparsePoint> = (0..5)
            .map(|i| SparsePoint {
                position: [i as f64 * 0.1, 0.0, 3.0],
                color: [0.4, 0.5, 0.6],
            })
            .collect();
        let cloud = init_from_points::<f64>(&pts, 2, 8, 1).unwrap();
        let k = Intrinsics::new(60.0, 60.0, 16.0, 16.0, 32, 32).unwrap();
        let pose = Pose::identity();
        let opts = RenderOptions {
            threads: 1,
            ..Default::default()
        };
        let out = render(&cloud, &k, &pose, &opts);
        let dc = Image::zeros(32, 32, 3);
        let df = Image::zeros(32, 32, 8);
        let bundle = render_backward(&cloud, &k, &pose, &out, &dc, &df, &opts).unwrap();
        assert!(bundle.positions.iter().flatten().all(|v| *v == 0.0));
        assert!(bundle.sh_coeffs.iter().all(|v| *v == 0.0));
        assert!(bundle.features.iter().all(|v| *v == 0.0));
        assert!(bundle.opacity_logits.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cloud = init_from_points::<f64>(
            &[SparsePoint {
                position: [0.0, 0.0, 2.0],
                color: [0.5; 3],
            }],
            0,
            4,
            0,
        )
        .unwrap();
        let k = Intrinsics::new(30.0, 30.0, 8.0, 8.0, 16, 16).unwrap();
        let pose = Pose::identity();
        let opts = RenderOptions::default();
        let out = render(&cloud, &k, &pose, &opts);
        let dc = Image::zeros(16, 16, 3);
        let df = Image::zeros(16, 15, 4);
        assert!(matches!(
            render_backward(&cloud, &k, &pose, &out, &dc, &df, &opts),
            Err(RasterError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn single_splat_dc_gradient_is_weight_times_basis() {
        // One splat covering the whole frame; adjoint 1 on the red channel of
        // one pixel. The DC coefficient gradient must equal the blending
        // weight at that pixel times the constant basis value.
        let cloud = init_from_points::<f64>(
            &[SparsePoint {
                position: [0.0, 0.0, 2.0],
                color: [0.5; 3],
            }],
            0,
            4,
            0,
        )
        .unwrap();
        let k = Intrinsics::new(10.0, 10.0, 4.0, 4.0, 8, 8).unwrap();
        let pose = Pose::identity();
        let opts = RenderOptions {
            threads: 1,
            ..Default::default()
        };
        let out = render(&cloud, &k, &pose, &opts);
        let mut dc = Image::zeros(8, 8, 3);
        *dc.at_mut(3, 4, 0) = 1.0;
        let df = Image::zeros(8, 8, 4);
        let bundle = render_backward(&cloud, &k, &pose, &out, &dc, &df, &opts).unwrap();

        let weight = out.alpha.at(3, 4, 0); // single splat: weight == alpha sum
        assert!(weight > 0.0);
        let want = weight * math::sh::C0;
        assert!(
            (bundle.sh_coeffs[0] - want).abs() < 1e-12,
            "{} vs {want}",
            bundle.sh_coeffs[0]
        );
        // Green/blue channels untouched.
        assert_eq!(bundle.sh_coeffs[1], 0.0);
        assert_eq!(bundle.sh_coeffs[2], 0.0);
    }
}

//! Seeded random scene generation for the randomized suites.
//!
//! Two presets matter: `gradient_safe` scenes keep every splat's footprint
//! well clear of the 3-sigma cutoff, opacities below the 0.99 clamp, and
//! colors inside (0, 1), so the loss surface is smooth at finite-difference
//! scale; equivalence scenes are wilder (partial coverage, culled splats,
//! near-opaque points) since forward-only comparisons tolerate kinks.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use semsplat_core::cloud::GaussianCloud;
use semsplat_core::image::Image;
use semsplat_core::math::sh::C0;
use semsplat_core::math::{logit, mat33_t, mat33_vec3, quat_normalize, sub3};
use semsplat_core::{Intrinsics, Pose};

#[derive(Debug, Clone, Copy)]
pub struct ScenePreset {
    pub splats: usize,
    pub width: u32,
    pub height: u32,
    pub feature_dim: usize,
    pub sh_degree: usize,
    pub gradient_safe: bool,
}

impl ScenePreset {
    pub fn gradient(splats: usize) -> Self {
        Self {
            splats,
            width: 8,
            height: 8,
            feature_dim: 16,
            sh_degree: 2,
            gradient_safe: true,
        }
    }

    pub fn equivalence(splats: usize, width: u32, height: u32) -> Self {
        Self {
            splats,
            width,
            height,
            feature_dim: 16,
            sh_degree: 2,
            gradient_safe: false,
        }
    }
}

pub fn random_scene(preset: &ScenePreset, seed: u64) -> (GaussianCloud<f64>, Intrinsics<f64>, Pose<f64>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let (w, h) = (preset.width as f64, preset.height as f64);
    let fx = w * 1.2;
    let fy = w * 1.2;
    let k = Intrinsics::new(fx, fy, w * 0.5, h * 0.5, preset.width, preset.height).unwrap();

    let q = quat_normalize([
        1.0 + rng.gen_range(-0.2..0.2),
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
    ]);
    let pose = Pose::from_quaternion(
        q,
        [
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        ],
    );
    let rot_t = mat33_t(&pose.rot);

    let mut cloud = GaussianCloud::<f64>::empty(preset.sh_degree, preset.feature_dim);
    let basis_count = (preset.sh_degree + 1) * (preset.sh_degree + 1);
    for _ in 0..preset.splats {
        // Place the point inside the frustum at a pixel target and depth.
        let (umin, umax, z) = if preset.gradient_safe {
            (w * 0.25, w * 0.75, rng.gen_range(2.0..5.0))
        } else {
            (-w * 0.2, w * 1.2, rng.gen_range(1.0..8.0))
        };
        let u = rng.gen_range(umin..umax);
        let v = rng.gen_range(umin / w * h..umax / w * h);
        let pc = [(u - k.u0) * z / fx, (v - k.v0) * z / fy, z];
        let p_world = mat33_vec3(&rot_t, sub3(pc, pose.t));
        cloud.positions.push(p_world);

        cloud.rotations.push(quat_normalize([
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ]));

        // Pixel-space footprint scale mapped back to world units.
        let sigma_px = if preset.gradient_safe {
            rng.gen_range(0.7 * w..1.3 * w)
        } else {
            rng.gen_range(1.5..0.35 * w)
        };
        let sigma_world = sigma_px * z / fx;
        let spread = if preset.gradient_safe { 0.25 } else { 1.0 };
        cloud.log_scales.push([
            sigma_world.ln() + rng.gen_range(-spread..spread),
            sigma_world.ln() + rng.gen_range(-spread..spread),
            sigma_world.ln() + rng.gen_range(-spread..spread),
        ]);

        let opacity = if preset.gradient_safe {
            rng.gen_range(0.2..0.85)
        } else {
            rng.gen_range(0.05..0.9)
        };
        cloud.opacity_logits.push(logit(opacity));

        for _ in 0..3 {
            let base: f64 = rng.gen_range(0.35..0.65);
            cloud.sh_coeffs.push((base - 0.5) / C0);
        }
        let rest_amp = if preset.gradient_safe { 0.02 } else { 0.1 };
        for _ in 1..basis_count {
            for _ in 0..3 {
                cloud.sh_coeffs.push(rng.gen_range(-rest_amp..rest_amp));
            }
        }
        for _ in 0..preset.feature_dim {
            cloud.features.push(rng.gen_range(-1.0..1.0));
        }
    }
    cloud.assert_consistent();
    (cloud, k, pose)
}

/// Random adjoint images in [-1, 1], seeded.
pub fn random_adjoints(
    height: usize,
    width: usize,
    feature_dim: usize,
    seed: u64,
) -> (Image<f64>, Image<f64>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut color = Image::zeros(height, width, 3);
    color.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let mut feature = Image::zeros(height, width, feature_dim);
    feature
        .data
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    (color, feature)
}

//! Synthetic desk-scale scenes rendered by an analytic ray tracer.
//!
//! The scene is a textured ground plane with shaded ellipsoidal blobs, each
//! carrying a class. Ground-truth RGB, dense labels, and per-blob instance
//! maps come from ray-ellipsoid intersection: a code path entirely separate
//! from the splatting renderer, so end-to-end tests never compare the
//! renderer against itself. Everything is seeded and bit-reproducible.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use semsplat_core::camera::{Intrinsics, Pose, SparsePoint};
use semsplat_core::image::{Image, InstanceMap, LabelMap};
use semsplat_core::math::{
    add3, cross3, dot3, mat33_t, mat33_vec3, normalize3, scale3, sub3, M33, V3,
};

use crate::bundle::{
    write_manifest, write_meta, BundlePaths, InstanceManifest, ManifestEntry, SceneMeta,
};
use crate::pngio;
use crate::CliError;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Object classes; labels run 1..=classes with background 0.
    pub classes: usize,
    pub blobs: usize,
    pub views: usize,
    pub size: u32,
    /// How many views keep their ground-truth label file.
    pub labeled: usize,
    pub seed: u64,
    /// Surface samples written to colmap/points3D.txt.
    pub colmap_points: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            blobs: 5,
            views: 30,
            size: 256,
            labeled: 3,
            seed: 0,
            colmap_points: 4000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.classes == 0 || self.classes > 254 {
            return Err(CliError::Config(format!(
                "classes = {} out of range 1..=254",
                self.classes
            )));
        }
        if self.blobs == 0 || self.blobs > 200 {
            return Err(CliError::Config(format!("blobs = {} out of range", self.blobs)));
        }
        if self.views == 0 || self.labeled == 0 || self.labeled > self.views {
            return Err(CliError::Config(format!(
                "need 1 <= labeled ({}) <= views ({})",
                self.labeled, self.views
            )));
        }
        if self.size < 16 {
            return Err(CliError::Config(format!("size = {} too small", self.size)));
        }
        Ok(())
    }
}

struct Blob {
    center: V3<f64>,
    semi_axes: V3<f64>,
    /// World-to-blob rotation.
    rot: M33<f64>,
    class: u8,
    color: V3<f64>,
}

pub struct SynthScene {
    blobs: Vec<Blob>,
    pub cameras: Vec<(Intrinsics<f64>, Pose<f64>)>,
    pub view_ids: Vec<String>,
    pub labeled_ids: Vec<String>,
    pub class_colors: Vec<[u8; 3]>,
    size: u32,
}

const LIGHT: V3<f64> = [0.355, 0.25, 0.9];

fn class_palette(classes: usize) -> Vec<[u8; 3]> {
    let mut palette = vec![[116, 111, 104]]; // background / ground
    let saturated: [[u8; 3]; 8] = [
        [204, 64, 54],
        [70, 140, 210],
        [90, 180, 80],
        [220, 170, 50],
        [150, 90, 190],
        [60, 190, 180],
        [230, 120, 160],
        [140, 140, 60],
    ];
    for c in 0..classes {
        palette.push(saturated[c % saturated.len()]);
    }
    palette
}

/// Builds the scene description (blobs + camera ring) from the config.
pub fn generate(cfg: &SynthConfig) -> SynthScene {
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let palette = class_palette(cfg.classes);

    let mut blobs = Vec::with_capacity(cfg.blobs);
    for i in 0..cfg.blobs {
        let angle = std::f64::consts::TAU * i as f64 / cfg.blobs as f64
            + rng.gen_range(-0.25..0.25);
        let radius = rng.gen_range(0.75..1.45);
        let semi_axes = [
            rng.gen_range(0.38..0.62),
            rng.gen_range(0.38..0.62),
            rng.gen_range(0.34..0.56),
        ];
        let spin = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s, c) = spin.sin_cos();
        let rot = [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]];
        let class = (1 + i % cfg.classes) as u8;
        let base = palette[class as usize];
        let jitter = rng.gen_range(-0.04..0.04);
        blobs.push(Blob {
            center: [
                radius * angle.cos(),
                radius * angle.sin(),
                semi_axes[2] * rng.gen_range(0.55..0.9),
            ],
            semi_axes,
            rot,
            class,
            color: [
                (base[0] as f64 / 255.0 + jitter).clamp(0.05, 0.95),
                (base[1] as f64 / 255.0 + jitter).clamp(0.05, 0.95),
                (base[2] as f64 / 255.0 + jitter).clamp(0.05, 0.95),
            ],
        });
    }

    let size = cfg.size as f64;
    let f = size * 1.18;
    let intrinsics = Intrinsics::new(f, f, size * 0.5, size * 0.5, cfg.size, cfg.size).unwrap();
    let mut cameras = Vec::with_capacity(cfg.views);
    let mut view_ids = Vec::with_capacity(cfg.views);
    for i in 0..cfg.views {
        let angle = std::f64::consts::TAU * i as f64 / cfg.views as f64
            + rng.gen_range(-0.06..0.06);
        let radius = 3.1 + rng.gen_range(-0.25..0.25);
        let height = 2.9 + rng.gen_range(-0.3..0.3);
        let eye = [radius * angle.cos(), radius * angle.sin(), height];
        cameras.push((intrinsics, look_at(eye, [0.0, 0.0, 0.25])));
        view_ids.push(format!("view_{i:03}"));
    }

    let labeled_ids = (0..cfg.labeled)
        .map(|j| view_ids[j * cfg.views / cfg.labeled].clone())
        .collect();

    SynthScene {
        blobs,
        cameras,
        view_ids,
        labeled_ids,
        class_colors: palette,
        size: cfg.size,
    }
}

/// World-to-camera pose looking from `eye` toward `target`, world +z up,
/// camera +z forward / +y down.
fn look_at(eye: V3<f64>, target: V3<f64>) -> Pose<f64> {
    let forward = normalize3(sub3(target, eye));
    let right = normalize3(cross3(forward, [0.0, 0.0, 1.0]));
    let down = cross3(forward, right);
    let rot = [right, down, forward];
    Pose {
        rot,
        t: scale3(mat33_vec3(&rot, eye), -1.0),
    }
}

enum Hit {
    Ground(V3<f64>),
    Blob { index: usize, normal: V3<f64> },
}

fn trace(scene: &SynthScene, origin: V3<f64>, dir: V3<f64>) -> Option<(f64, Hit)> {
    let mut best: Option<(f64, Hit)> = None;
    if dir[2] < -1e-9 {
        let t = -origin[2] / dir[2];
        if t > 1e-6 {
            best = Some((t, Hit::Ground(add3(origin, scale3(dir, t)))));
        }
    }
    for (i, blob) in scene.blobs.iter().enumerate() {
        // Transform the ray into the unit-sphere frame of the ellipsoid.
        let o = mat33_vec3(&blob.rot, sub3(origin, blob.center));
        let d = mat33_vec3(&blob.rot, dir);
        let os = [
            o[0] / blob.semi_axes[0],
            o[1] / blob.semi_axes[1],
            o[2] / blob.semi_axes[2],
        ];
        let ds = [
            d[0] / blob.semi_axes[0],
            d[1] / blob.semi_axes[1],
            d[2] / blob.semi_axes[2],
        ];
        let a = dot3(ds, ds);
        let b = 2.0 * dot3(os, ds);
        let c = dot3(os, os) - 1.0;
        let disc = b * b - 4.0 * a * c;
        if disc <= 0.0 {
            continue;
        }
        let sqrt_disc = disc.sqrt();
        let mut t = (-b - sqrt_disc) / (2.0 * a);
        if t <= 1e-6 {
            t = (-b + sqrt_disc) / (2.0 * a);
        }
        if t <= 1e-6 || best.as_ref().is_some_and(|(bt, _)| *bt <= t) {
            continue;
        }
        let point = add3(origin, scale3(dir, t));
        // Gradient of the implicit ellipsoid function, back in world frame.
        let local = mat33_vec3(&blob.rot, sub3(point, blob.center));
        let grad_local = [
            local[0] / (blob.semi_axes[0] * blob.semi_axes[0]),
            local[1] / (blob.semi_axes[1] * blob.semi_axes[1]),
            local[2] / (blob.semi_axes[2] * blob.semi_axes[2]),
        ];
        let normal = normalize3(mat33_vec3(&mat33_t(&blob.rot), grad_local));
        best = Some((t, Hit::Blob { index: i, normal }));
    }
    best
}

fn ground_color(p: V3<f64>) -> V3<f64> {
    [
        0.45 + 0.06 * (1.7 * p[0] + 0.5).sin(),
        0.43 + 0.06 * (1.3 * p[1]).sin(),
        0.40 + 0.06 * (1.1 * (p[0] + p[1])).sin(),
    ]
}

fn shade(base: V3<f64>, normal: V3<f64>) -> V3<f64> {
    let l = normalize3(LIGHT);
    let lambert = 0.35 + 0.65 * dot3(normal, l).max(0.0);
    [
        (base[0] * lambert).clamp(0.0, 1.0),
        (base[1] * lambert).clamp(0.0, 1.0),
        (base[2] * lambert).clamp(0.0, 1.0),
    ]
}

/// Shaded color, class label, and instance id for one ray.
fn sample_ray(scene: &SynthScene, origin: V3<f64>, dir: V3<f64>) -> (V3<f64>, u8, u16) {
    match trace(scene, origin, dir) {
        Some((_, Hit::Ground(p))) => (shade(ground_color(p), [0.0, 0.0, 1.0]), 0, 0),
        Some((_, Hit::Blob { index, normal })) => (
            shade(scene.blobs[index].color, normal),
            scene.blobs[index].class,
            (index + 1) as u16,
        ),
        // Horizon miss: unlit sky, background class, no instance.
        None => ([0.06, 0.07, 0.09], 0, 0),
    }
}

/// Renders RGB, dense labels, and the instance map for one camera.
pub fn render_view(
    scene: &SynthScene,
    k: &Intrinsics<f64>,
    pose: &Pose<f64>,
) -> (Image<f32>, LabelMap, InstanceMap) {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut rgb = Image::zeros(h, w, 3);
    let mut labels = LabelMap::filled(h, w, 0);
    let mut instances = InstanceMap::filled(h, w, 0);
    let rot_t = mat33_t(&pose.rot);
    let eye = pose.camera_center();
    for y in 0..h {
        for x in 0..w {
            let dir_cam = normalize3([
                (x as f64 + 0.5 - k.u0) / k.fx,
                (y as f64 + 0.5 - k.v0) / k.fy,
                1.0,
            ]);
            let dir = mat33_vec3(&rot_t, dir_cam);
            let (color, class, instance) = sample_ray(scene, eye, dir);
            for ch in 0..3 {
                *rgb.at_mut(y, x, ch) = color[ch] as f32;
            }
            labels.set(y, x, class);
            instances.set(y, x, instance);
        }
    }
    (rgb, labels, instances)
}

/// Surface samples standing in for an SfM point cloud: rays through a pixel
/// grid of every view, keeping each hit as a colored point. Hits from
/// different views that land in the same small voxel are merged, the way SfM
/// triangulates one track per surface patch, so the cloud does not stack
/// duplicate points on well-observed surfaces.
pub fn sample_surface_points(scene: &SynthScene, count: usize, seed: u64) -> Vec<SparsePoint> {
    let mut candidates = Vec::new();
    let mut occupied = std::collections::HashSet::new();
    let voxel = 0.045;
    let stride = (scene.size as usize / 96).max(1);
    for (k, pose) in &scene.cameras {
        let rot_t = mat33_t(&pose.rot);
        let eye = pose.camera_center();
        let mut y = stride / 2;
        while y < k.height as usize {
            let mut x = stride / 2;
            while x < k.width as usize {
                let dir_cam = normalize3([
                    (x as f64 + 0.5 - k.u0) / k.fx,
                    (y as f64 + 0.5 - k.v0) / k.fy,
                    1.0,
                ]);
                let dir = mat33_vec3(&rot_t, dir_cam);
                if let Some((t, _)) = trace(scene, eye, dir) {
                    // Distant ground hits belong to other views' frusta.
                    if t < 12.0 {
                        let point = add3(eye, scale3(dir, t));
                        let key = (
                            (point[0] / voxel).floor() as i64,
                            (point[1] / voxel).floor() as i64,
                            (point[2] / voxel).floor() as i64,
                        );
                        if occupied.insert(key) {
                            let (color, _, _) = sample_ray(scene, eye, dir);
                            candidates.push(SparsePoint {
                                position: point,
                                color,
                            });
                        }
                    }
                }
                x += stride;
            }
            y += stride;
        }
    }
    let mut rng = StdRng::seed_from_u64(seed ^ 0x50f7);
    candidates.shuffle(&mut rng);
    candidates.truncate(count);
    candidates
}

/// Rotation matrix to quaternion `(w, x, y, z)`.
fn rot_to_quat(r: &M33<f64>) -> [f64; 4] {
    let trace = r[0][0] + r[1][1] + r[2][2];
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[2][1] - r[1][2]) / s,
            (r[0][2] - r[2][0]) / s,
            (r[1][0] - r[0][1]) / s,
        ]
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        [
            (r[2][1] - r[1][2]) / s,
            0.25 * s,
            (r[0][1] + r[1][0]) / s,
            (r[0][2] + r[2][0]) / s,
        ]
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        [
            (r[0][2] - r[2][0]) / s,
            (r[0][1] + r[1][0]) / s,
            0.25 * s,
            (r[1][2] + r[2][1]) / s,
        ]
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        [
            (r[1][0] - r[0][1]) / s,
            (r[0][2] + r[2][0]) / s,
            (r[1][2] + r[2][1]) / s,
            0.25 * s,
        ]
    }
}

fn write_colmap_text(
    dir: &Path,
    scene: &SynthScene,
    points: &[SparsePoint],
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let k = &scene.cameras[0].0;
    let cameras = format!(
        "# Camera list: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n1 PINHOLE {} {} {} {} {} {}\n",
        k.width, k.height, k.fx, k.fy, k.u0, k.v0
    );
    fs::write(dir.join("cameras.txt"), cameras)
        .map_err(|e| CliError::io(&dir.join("cameras.txt"), e))?;

    let mut images = String::from(
        "# Image list: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    for (i, (id, (_, pose))) in scene.view_ids.iter().zip(&scene.cameras).enumerate() {
        let q = rot_to_quat(&pose.rot);
        writeln!(
            images,
            "{} {} {} {} {} {} {} {} 1 {}.png\n",
            i + 1,
            q[0],
            q[1],
            q[2],
            q[3],
            pose.t[0],
            pose.t[1],
            pose.t[2],
            id
        )
        .expect("string write");
    }
    fs::write(dir.join("images.txt"), images)
        .map_err(|e| CliError::io(&dir.join("images.txt"), e))?;

    let mut pts = String::from(
        "# 3D point list: POINT3D_ID X Y Z R G B ERROR TRACK[] as (IMAGE_ID POINT2D_IDX)\n",
    );
    for (i, p) in points.iter().enumerate() {
        writeln!(
            pts,
            "{} {} {} {} {} {} {} 0.5 1 0 2 0",
            i + 1,
            p.position[0],
            p.position[1],
            p.position[2],
            (p.color[0] * 255.0).round() as u8,
            (p.color[1] * 255.0).round() as u8,
            (p.color[2] * 255.0).round() as u8,
        )
        .expect("string write");
    }
    fs::write(dir.join("points3D.txt"), pts)
        .map_err(|e| CliError::io(&dir.join("points3D.txt"), e))?;
    Ok(())
}

/// Generates and writes the whole bundle; returns its metadata.
pub fn write_bundle(out: &Path, cfg: &SynthConfig) -> Result<SceneMeta, CliError> {
    cfg.validate()?;
    let scene = generate(cfg);
    let paths = BundlePaths::new(out);
    for sub in ["images", "labels", "labels_full", "instances"] {
        fs::create_dir_all(out.join(sub)).map_err(|e| CliError::io(&out.join(sub), e))?;
    }

    let mut manifest = InstanceManifest { entries: Vec::new() };
    for (id, (k, pose)) in scene.view_ids.iter().zip(&scene.cameras) {
        let (rgb, labels, instances) = render_view(&scene, k, pose);
        pngio::write_rgb(&paths.image(id), &rgb)?;
        pngio::write_label_map(&paths.label_full(id), &labels, &scene.class_colors)?;
        if scene.labeled_ids.contains(id) {
            pngio::write_label_map(&paths.label(id), &labels, &scene.class_colors)?;
        }
        let file = format!("{id}.png");
        pngio::write_instance_map(&paths.instances_dir().join(&file), &instances)?;
        manifest.entries.push(ManifestEntry {
            view: id.clone(),
            file,
        });
    }
    write_manifest(&paths, &manifest)?;

    let points = sample_surface_points(&scene, cfg.colmap_points, cfg.seed);
    write_colmap_text(&paths.colmap(), &scene, &points)?;

    let meta = SceneMeta {
        width: cfg.size,
        height: cfg.size,
        num_classes: cfg.classes + 1,
        views: scene.view_ids.clone(),
        labeled: scene.labeled_ids.clone(),
        class_colors: scene.class_colors.clone(),
    };
    write_meta(&paths, &meta)?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poses_are_valid_rotations() {
        let scene = generate(&SynthConfig::default());
        for (_, pose) in &scene.cameras {
            pose.validate().unwrap();
        }
    }

    #[test]
    fn quaternion_round_trips_rotation() {
        let scene = generate(&SynthConfig {
            views: 8,
            ..Default::default()
        });
        for (_, pose) in &scene.cameras {
            let q = rot_to_quat(&pose.rot);
            let r2 = semsplat_core::math::quat_to_rot(semsplat_core::math::quat_normalize(q));
            for i in 0..3 {
                for j in 0..3 {
                    assert!((pose.rot[i][j] - r2[i][j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn labels_and_instances_are_consistent() {
        let cfg = SynthConfig {
            size: 64,
            views: 4,
            ..Default::default()
        };
        let scene = generate(&cfg);
        for (k, pose) in &scene.cameras {
            let (_, labels, instances) = render_view(&scene, k, pose);
            for (lab, inst) in labels.data.iter().zip(&instances.data) {
                if *inst == 0 {
                    assert_eq!(*lab, 0, "instance-free pixel must be background");
                } else {
                    let blob = &scene.blobs[*inst as usize - 1];
                    assert_eq!(*lab, blob.class, "instance class mismatch");
                }
            }
        }
    }

    #[test]
    fn blobs_are_visible_from_every_view() {
        let cfg = SynthConfig {
            size: 64,
            ..Default::default()
        };
        let scene = generate(&cfg);
        for (k, pose) in &scene.cameras {
            let (_, _, instances) = render_view(&scene, k, pose);
            let covered = instances.data.iter().filter(|&&v| v != 0).count();
            assert!(
                covered > 64 * 64 / 50,
                "blobs cover too little of the frame: {covered}"
            );
        }
    }

    #[test]
    fn surface_points_sit_on_surfaces() {
        let cfg = SynthConfig {
            size: 64,
            views: 6,
            ..Default::default()
        };
        let scene = generate(&cfg);
        let points = sample_surface_points(&scene, 500, cfg.seed);
        assert!(points.len() >= 400);
        for p in &points {
            let on_ground = p.position[2].abs() < 1e-6;
            let on_blob = scene.blobs.iter().any(|b| {
                let local = mat33_vec3(&b.rot, sub3(p.position, b.center));
                let v = (local[0] / b.semi_axes[0]).powi(2)
                    + (local[1] / b.semi_axes[1]).powi(2)
                    + (local[2] / b.semi_axes[2]).powi(2);
                (v - 1.0).abs() < 1e-6
            });
            assert!(on_ground || on_blob);
        }
    }
}

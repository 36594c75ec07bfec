//! Pinhole camera model: conversions between pixel, camera, and world
//! frames, plus ingestion of COLMAP text exports.
//!
//! Poses follow the COLMAP convention: `R` and `t` map world coordinates
//! into the camera frame, `pc = R * pw + t`.

mod colmap;

pub use colmap::{parse_colmap, ColmapView};

use crate::image::{Image, LabelMap};
use crate::math::{self, M23, M33, V2, V3};
use crate::Scalar;
use thiserror::Error;

/// Points closer than this camera-space depth are treated as behind the
/// camera.
pub const DEFAULT_NEAR: f64 = 0.01;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("point is behind the camera (z = {z:.6} <= near plane {near})")]
    BehindCamera { z: f64, near: f64 },
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}

/// Pinhole intrinsics with focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub u0: T,
    pub v0: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Scalar> Intrinsics<T> {
    pub fn new(fx: T, fy: T, u0: T, v0: T, width: u32, height: u32) -> Result<Self, CameraError> {
        let k = Self {
            fx,
            fy,
            u0,
            v0,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={:?} fy={:?}",
                self.fx, self.fy
            )));
        }
        let (w, h) = (
            T::from_u32(self.width).unwrap(),
            T::from_u32(self.height).unwrap(),
        );
        if self.u0 < T::zero() || self.u0 >= w || self.v0 < T::zero() || self.v0 >= h {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({:?}, {:?}) outside {}x{} image",
                self.u0, self.v0, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Intrinsics<U> {
        Intrinsics {
            fx: U::from_f64(self.fx.as_f64()).unwrap(),
            fy: U::from_f64(self.fy.as_f64()).unwrap(),
            u0: U::from_f64(self.u0.as_f64()).unwrap(),
            v0: U::from_f64(self.v0.as_f64()).unwrap(),
            width: self.width,
            height: self.height,
        }
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T> {
    pub rot: M33<T>,
    pub t: V3<T>,
}

impl<T: Scalar> Pose<T> {
    pub fn identity() -> Self {
        let mut rot = [[T::zero(); 3]; 3];
        for (i, row) in rot.iter_mut().enumerate() {
            row[i] = T::one();
        }
        Self {
            rot,
            t: [T::zero(); 3],
        }
    }

    /// Pose from a world-to-camera quaternion `(w, x, y, z)` and translation.
    pub fn from_quaternion(q: [T; 4], t: V3<T>) -> Self {
        Self {
            rot: math::quat_to_rot(math::quat_normalize(q)),
            t,
        }
    }

    /// Checks orthonormality (`R^T R = I` within 1e-6) and `det R = +1`.
    pub fn validate(&self) -> Result<(), CameraError> {
        let rtr = math::mat33_mul(&math::mat33_t(&self.rot), &self.rot);
        let tol = math::sc::<T>(1e-6);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { T::one() } else { T::zero() };
                if (rtr[i][j] - want).abs() > tol {
                    return Err(CameraError::InvalidPose(format!(
                        "R^T R deviates from identity at ({i},{j}): {:?}",
                        rtr[i][j]
                    )));
                }
            }
        }
        let r = &self.rot;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - T::one()).abs() > tol {
            return Err(CameraError::InvalidPose(format!("det R = {det:?}, not +1")));
        }
        Ok(())
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> V3<T> {
        let rt = math::mat33_t(&self.rot);
        math::scale3(math::mat33_vec3(&rt, self.t), -T::one())
    }

    pub fn cast<U: Scalar>(&self) -> Pose<U> {
        let mut rot = [[U::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rot[i][j] = U::from_f64(self.rot[i][j].as_f64()).unwrap();
            }
        }
        let t = [
            U::from_f64(self.t[0].as_f64()).unwrap(),
            U::from_f64(self.t[1].as_f64()).unwrap(),
            U::from_f64(self.t[2].as_f64()).unwrap(),
        ];
        Pose { rot, t }
    }
}

/// Sparse SfM point used to seed the Gaussian cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsePoint {
    pub position: [f64; 3],
    /// RGB in [0, 1].
    pub color: [f64; 3],
}

/// One training view: camera, photograph, and whatever supervision exists.
#[derive(Debug, Clone)]
pub struct View<T> {
    pub id: String,
    pub intrinsics: Intrinsics<T>,
    pub pose: Pose<T>,
    /// H x W x 3 RGB in [0, 1].
    pub image: Image<T>,
    /// Dense ground-truth class labels, present on the sparse labeled subset.
    pub label: Option<LabelMap>,
    /// Pseudo label map plus its boundary mask.
    pub pseudo: Option<(LabelMap, LabelMap)>,
}

/// `pc = R * p + t`.
#[inline]
pub fn world_to_camera<T: Scalar>(p: V3<T>, pose: &Pose<T>) -> V3<T> {
    math::add3(math::mat33_vec3(&pose.rot, p), pose.t)
}

/// Perspective projection of a camera-frame point to pixel coordinates and
/// depth.
#[inline]
pub fn camera_to_pixel<T: Scalar>(
    pc: V3<T>,
    k: &Intrinsics<T>,
) -> Result<(V2<T>, T), CameraError> {
    let near = math::sc::<T>(DEFAULT_NEAR);
    if pc[2] <= near {
        return Err(CameraError::BehindCamera {
            z: pc[2].as_f64(),
            near: DEFAULT_NEAR,
        });
    }
    let u = k.fx * pc[0] / pc[2] + k.u0;
    let v = k.fy * pc[1] / pc[2] + k.v0;
    Ok(([u, v], pc[2]))
}

/// Camera-frame ray direction through pixel `(u, v)` at unit depth.
#[inline]
pub fn pixel_to_camera_ray<T: Scalar>(uv: V2<T>, k: &Intrinsics<T>) -> V3<T> {
    [(uv[0] - k.u0) / k.fx, (uv[1] - k.v0) / k.fy, T::one()]
}

/// Jacobian of `camera_to_pixel` w.r.t. the camera-frame point:
/// rows are d(u,v)/d(x,y,z).
#[inline]
pub fn projection_jacobian<T: Scalar>(
    pc: V3<T>,
    k: &Intrinsics<T>,
) -> Result<M23<T>, CameraError> {
    let near = math::sc::<T>(DEFAULT_NEAR);
    if pc[2] <= near {
        return Err(CameraError::BehindCamera {
            z: pc[2].as_f64(),
            near: DEFAULT_NEAR,
        });
    }
    let z = pc[2];
    let z2 = z * z;
    let zero = T::zero();
    Ok([
        [k.fx / z, zero, -k.fx * pc[0] / z2],
        [zero, k.fy / z, -k.fy * pc[1] / z2],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{norm3, sub3};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn k256() -> Intrinsics<f64> {
        Intrinsics::new(100.0, 100.0, 256.0, 256.0, 512, 512).unwrap()
    }

    fn rot_z_90() -> M33<f64> {
        [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
    }

    fn random_pose(rng: &mut StdRng) -> Pose<f64> {
        let q = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        Pose::from_quaternion(
            q,
            [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ],
        )
    }

    #[test]
    fn world_to_camera_identity() {
        let p = world_to_camera([1.0, 2.0, 3.0], &Pose::identity());
        assert_eq!(p, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn world_to_camera_z_rotation() {
        let pose = Pose {
            rot: rot_z_90(),
            t: [0.0; 3],
        };
        pose.validate().unwrap();
        let p = world_to_camera([1.0, 0.0, 0.0], &pose);
        assert!((p[0]).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[2].abs() < 1e-12);
    }

    #[test]
    fn world_to_camera_matches_hand_product() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let pose = random_pose(&mut rng);
            pose.validate().unwrap();
            let p = [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ];
            let got = world_to_camera(p, &pose);
            for i in 0..3 {
                let want = pose.rot[i][0] * p[0]
                    + pose.rot[i][1] * p[1]
                    + pose.rot[i][2] * p[2]
                    + pose.t[i];
                assert!((got[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn world_to_camera_preserves_distances() {
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let a = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let b = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let d0 = norm3(sub3(a, b));
            let d1 = norm3(sub3(world_to_camera(a, &pose), world_to_camera(b, &pose)));
            assert!((d0 - d1).abs() < 1e-9);
        }
    }

    #[test]
    fn camera_to_pixel_on_axis() {
        let ([u, v], d) = camera_to_pixel([0.0, 0.0, 1.0], &k256()).unwrap();
        assert_eq!((u, v, d), (256.0, 256.0, 1.0));
    }

    #[test]
    fn camera_to_pixel_off_axis() {
        let ([u, _], _) = camera_to_pixel([1.0, 0.0, 2.0], &k256()).unwrap();
        assert!((u - 306.0).abs() < 1e-12);
    }

    #[test]
    fn camera_to_pixel_behind_near_plane() {
        assert!(matches!(
            camera_to_pixel([0.0, 0.0, 0.005], &k256()),
            Err(CameraError::BehindCamera { .. })
        ));
    }

    #[test]
    fn pixel_round_trip() {
        let k = k256();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let u = rng.gen_range(0.0..512.0);
            let v = rng.gen_range(0.0..512.0);
            let z = rng.gen_range(0.1..50.0);
            let ray = pixel_to_camera_ray([u, v], &k);
            let ([u2, v2], d) = camera_to_pixel(math::scale3(ray, z), &k).unwrap();
            assert!((u2 - u).abs() < 1e-9 && (v2 - v).abs() < 1e-9);
            assert!((d - z).abs() < 1e-9);
        }
    }

    #[test]
    fn jacobian_on_axis() {
        let j = projection_jacobian([0.0, 0.0, 1.0], &k256()).unwrap();
        assert_eq!(j, [[100.0, 0.0, 0.0], [0.0, 100.0, 0.0]]);
    }

    #[test]
    fn jacobian_direct_evaluation() {
        let k = Intrinsics::new(2.0, 2.0, 0.5, 0.5, 2, 2).unwrap();
        let j = projection_jacobian([1.0, 1.0, 2.0], &k).unwrap();
        assert_eq!(j, [[1.0, 0.0, -0.5], [0.0, 1.0, -0.5]]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let k = k256();
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..30 {
            let pc = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.5..10.0),
            ];
            let jac = projection_jacobian(pc, &k).unwrap();
            let h = 1e-4;
            for axis in 0..3 {
                let mut pp = pc;
                let mut pm = pc;
                pp[axis] += h;
                pm[axis] -= h;
                let (up, _) = camera_to_pixel(pp, &k).unwrap();
                let (um, _) = camera_to_pixel(pm, &k).unwrap();
                for row in 0..2 {
                    let fd = (up[row] - um[row]) / (2.0 * h);
                    let denom = jac[row][axis].abs().max(fd.abs()).max(1.0);
                    assert!(
                        ((jac[row][axis] - fd) / denom).abs() < 1e-5,
                        "row {row} axis {axis}"
                    );
                }
            }
        }
    }
}

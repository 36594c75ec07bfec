//! Storage and initialization of the Gaussian point cloud.
//!
//! Attributes are stored unconstrained and activated on use: opacity as a
//! logit (sigmoid), scales as logs (exp, clamped), rotations as quaternions
//! that get renormalized before any covariance is built. Color is a set of
//! spherical-harmonic coefficients per point; semantics are a flat feature
//! vector per point.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::camera::SparsePoint;
use crate::math::{self, quat_normalize, quat_to_rot, sc, M33, V3};
use crate::spatial::SpatialIndex;
use crate::Scalar;

/// Hard cap on the number of points a cloud may hold.
pub const MAX_POINTS: usize = 300_000;

/// Default number of semantic feature channels.
pub const DEFAULT_FEATURE_DIM: usize = 16;

/// Default spherical-harmonic degree for color (27 coefficients per point).
pub const DEFAULT_SH_DEGREE: usize = 2;

/// `log_scale` is clamped to this range before exponentiation.
pub const LOG_SCALE_MIN: f64 = -20.0;
pub const LOG_SCALE_MAX: f64 = 10.0;

const INIT_OPACITY: f64 = 0.1;
const FEATURE_INIT_RANGE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("cannot initialize a cloud from zero points")]
    EmptyInput,
    #[error("cloud would exceed the {MAX_POINTS}-point cap (requested {0})")]
    TooManyPoints(usize),
    #[error("sh degree {0} out of supported range 0..=3")]
    BadShDegree(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud<T> {
    pub positions: Vec<V3<T>>,
    /// Quaternions `(w, x, y, z)`, not necessarily normalized in storage.
    pub rotations: Vec<[T; 4]>,
    pub log_scales: Vec<V3<T>>,
    pub opacity_logits: Vec<T>,
    /// `n * 3 * basis` coefficients; per point the layout is
    /// `[basis0 rgb, basis1 rgb, ...]`.
    pub sh_coeffs: Vec<T>,
    /// `n * feature_dim` semantic features.
    pub features: Vec<T>,
    pub sh_degree: usize,
    pub feature_dim: usize,
}

impl<T: Scalar> GaussianCloud<T> {
    pub fn empty(sh_degree: usize, feature_dim: usize) -> Self {
        Self {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh_coeffs: Vec::new(),
            features: Vec::new(),
            sh_degree,
            feature_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sh_coeffs_per_point(&self) -> usize {
        3 * math::sh::basis_count(self.sh_degree)
    }

    pub fn sh_of(&self, i: usize) -> &[T] {
        let c = self.sh_coeffs_per_point();
        &self.sh_coeffs[i * c..(i + 1) * c]
    }

    pub fn feature_of(&self, i: usize) -> &[T] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Checks that every attribute array covers the same number of points.
    pub fn assert_consistent(&self) {
        let n = self.len();
        debug_assert_eq!(self.rotations.len(), n);
        debug_assert_eq!(self.log_scales.len(), n);
        debug_assert_eq!(self.opacity_logits.len(), n);
        debug_assert_eq!(self.sh_coeffs.len(), n * self.sh_coeffs_per_point());
        debug_assert_eq!(self.features.len(), n * self.feature_dim);
    }

    /// Activated opacity, `sigmoid(logit)`.
    pub fn opacity(&self, i: usize) -> T {
        math::sigmoid(self.opacity_logits[i])
    }

    /// Activated per-axis scale, `exp(clamp(log_scale))`.
    pub fn scale(&self, i: usize) -> V3<T> {
        let ls = self.log_scales[i];
        [
            clamp_log_scale(ls[0]).exp(),
            clamp_log_scale(ls[1]).exp(),
            clamp_log_scale(ls[2]).exp(),
        ]
    }

    /// Copies point `src` (all attributes) onto the end of the cloud.
    pub fn push_copy_of(&mut self, src: usize) {
        self.positions.push(self.positions[src]);
        self.rotations.push(self.rotations[src]);
        self.log_scales.push(self.log_scales[src]);
        self.opacity_logits.push(self.opacity_logits[src]);
        let c = self.sh_coeffs_per_point();
        let sh: Vec<T> = self.sh_coeffs[src * c..(src + 1) * c].to_vec();
        self.sh_coeffs.extend_from_slice(&sh);
        let f: Vec<T> =
            self.features[src * self.feature_dim..(src + 1) * self.feature_dim].to_vec();
        self.features.extend_from_slice(&f);
    }

    /// Keeps only the points where `keep` is true, preserving order.
    pub fn retain(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let c = self.sh_coeffs_per_point();
        let f = self.feature_dim;
        let mut write = 0;
        for read in 0..self.len() {
            if !keep[read] {
                continue;
            }
            if write != read {
                self.positions[write] = self.positions[read];
                self.rotations[write] = self.rotations[read];
                self.log_scales[write] = self.log_scales[read];
                self.opacity_logits[write] = self.opacity_logits[read];
                for j in 0..c {
                    self.sh_coeffs[write * c + j] = self.sh_coeffs[read * c + j];
                }
                for j in 0..f {
                    self.features[write * f + j] = self.features[read * f + j];
                }
            }
            write += 1;
        }
        self.positions.truncate(write);
        self.rotations.truncate(write);
        self.log_scales.truncate(write);
        self.opacity_logits.truncate(write);
        self.sh_coeffs.truncate(write * c);
        self.features.truncate(write * f);
    }

    pub fn cast<U: Scalar>(&self) -> GaussianCloud<U> {
        let to = |v: &T| U::from_f64(v.as_f64()).unwrap();
        GaussianCloud {
            positions: self
                .positions
                .iter()
                .map(|p| [to(&p[0]), to(&p[1]), to(&p[2])])
                .collect(),
            rotations: self
                .rotations
                .iter()
                .map(|q| [to(&q[0]), to(&q[1]), to(&q[2]), to(&q[3])])
                .collect(),
            log_scales: self
                .log_scales
                .iter()
                .map(|s| [to(&s[0]), to(&s[1]), to(&s[2])])
                .collect(),
            opacity_logits: self.opacity_logits.iter().map(to).collect(),
            sh_coeffs: self.sh_coeffs.iter().map(to).collect(),
            features: self.features.iter().map(to).collect(),
            sh_degree: self.sh_degree,
            feature_dim: self.feature_dim,
        }
    }
}

#[inline]
fn clamp_log_scale<T: Scalar>(v: T) -> T {
    v.max(sc(LOG_SCALE_MIN)).min(sc(LOG_SCALE_MAX))
}

/// 3D covariance `R * diag(exp(2 * log_scale)) * R^T` from an unnormalized
/// quaternion and log scales.
pub fn covariance_3d<T: Scalar>(rotation: [T; 4], log_scale: V3<T>) -> M33<T> {
    let r = quat_to_rot(quat_normalize(rotation));
    let two = sc::<T>(2.0);
    let d = [
        (two * clamp_log_scale(log_scale[0])).exp(),
        (two * clamp_log_scale(log_scale[1])).exp(),
        (two * clamp_log_scale(log_scale[2])).exp(),
    ];
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = T::zero();
            for (k, &dk) in d.iter().enumerate() {
                acc = acc + r[i][k] * dk * r[j][k];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// Builds a cloud from sparse SfM points.
///
/// Positions are copied; the SH DC term reproduces the point color; scales
/// start isotropic at the mean distance to the 3 nearest neighbors; opacity
/// starts at 0.1; features are drawn uniformly from a small symmetric range
/// with the given seed.
pub fn init_from_points<T: Scalar>(
    points: &[SparsePoint],
    sh_degree: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<GaussianCloud<T>, CloudError> {
    if points.is_empty() {
        return Err(CloudError::EmptyInput);
    }
    if points.len() > MAX_POINTS {
        return Err(CloudError::TooManyPoints(points.len()));
    }
    if sh_degree > 3 {
        return Err(CloudError::BadShDegree(sh_degree));
    }
    let n = points.len();
    let mut cloud = GaussianCloud::empty(sh_degree, feature_dim);

    let positions_f64: Vec<V3<f64>> = points.iter().map(|p| p.position).collect();
    let index = SpatialIndex::build(&positions_f64).expect("non-empty by check above");
    let k = 3.min(n - 1);

    let coeffs = math::sh::basis_count(sh_degree);
    let mut rng = StdRng::seed_from_u64(seed);
    for (i, p) in points.iter().enumerate() {
        cloud.positions.push([
            sc(p.position[0]),
            sc(p.position[1]),
            sc(p.position[2]),
        ]);
        cloud.rotations.push([T::one(), T::zero(), T::zero(), T::zero()]);

        let mean_dist = if k == 0 {
            1.0
        } else {
            let nn = index.knn(p.position, k, Some(i)).expect("k <= n - 1");
            nn.iter()
                .map(|&j| math::norm3(math::sub3(positions_f64[j], p.position)))
                .sum::<f64>()
                / k as f64
        };
        let ls = sc::<T>(mean_dist.max(1e-7).ln());
        cloud.log_scales.push([ls, ls, ls]);
        cloud.opacity_logits.push(math::logit(sc(INIT_OPACITY)));

        // DC term chosen so degree-0 evaluation returns the point color:
        // color = C0 * dc + 0.5.
        for b in 0..coeffs {
            for ch in 0..3 {
                let v = if b == 0 {
                    sc((p.color[ch] - 0.5) / math::sh::C0)
                } else {
                    T::zero()
                };
                cloud.sh_coeffs.push(v);
            }
        }
        for _ in 0..feature_dim {
            cloud
                .features
                .push(sc(rng.gen_range(-FEATURE_INIT_RANGE..FEATURE_INIT_RANGE)));
        }
    }
    cloud.assert_consistent();
    Ok(cloud)
}

//! Small fixed-size linear algebra, quaternions, spherical harmonics, and
//! scalar activations shared by the geometry and rasterization code.

use crate::Scalar;

pub type V2<T> = [T; 2];
pub type V3<T> = [T; 3];
pub type M22<T> = [[T; 2]; 2];
/// 2 rows by 3 columns.
pub type M23<T> = [[T; 3]; 2];
pub type M33<T> = [[T; 3]; 3];

/// Scalar constant from an `f64` literal.
#[inline]
pub fn sc<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("constant convertible to scalar")
}

/// Dot product with four independent accumulators so the reduction
/// vectorizes.
#[inline]
pub fn dot_slices<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (pa, pb) = (&a[i * 4..i * 4 + 4], &b[i * 4..i * 4 + 4]);
        acc[0] += pa[0] * pb[0];
        acc[1] += pa[1] * pb[1];
        acc[2] += pa[2] * pb[2];
        acc[3] += pa[3] * pb[3];
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn add3<T: Scalar>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3<T: Scalar>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3<T: Scalar>(a: V3<T>, s: T) -> V3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3<T: Scalar>(a: V3<T>, b: V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3<T: Scalar>(a: V3<T>, b: V3<T>) -> V3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3<T: Scalar>(a: V3<T>) -> T {
    dot3(a, a).sqrt()
}

#[inline]
pub fn normalize3<T: Scalar>(a: V3<T>) -> V3<T> {
    let n = norm3(a);
    if n == T::zero() {
        return [T::zero(); 3];
    }
    scale3(a, T::one() / n)
}

#[inline]
pub fn mat33_vec3<T: Scalar>(m: &M33<T>, v: V3<T>) -> V3<T> {
    [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
}

#[inline]
pub fn mat33_t<T: Scalar>(m: &M33<T>) -> M33<T> {
    let mut r = [[T::zero(); 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            r[j][i] = e;
        }
    }
    r
}

#[inline]
pub fn mat33_mul<T: Scalar>(a: &M33<T>, b: &M33<T>) -> M33<T> {
    let mut r = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = T::zero();
            for (k, brow) in b.iter().enumerate() {
                acc = acc + a[i][k] * brow[j];
            }
            r[i][j] = acc;
        }
    }
    r
}

/// a (2x3) * b (3x3) -> 2x3
#[inline]
pub fn mat23_mul33<T: Scalar>(a: &M23<T>, b: &M33<T>) -> M23<T> {
    let mut r = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            let mut acc = T::zero();
            for (k, brow) in b.iter().enumerate() {
                acc = acc + a[i][k] * brow[j];
            }
            r[i][j] = acc;
        }
    }
    r
}

/// m (2x3) * s (3x3, symmetric) * m^T -> 2x2
#[inline]
pub fn sandwich23<T: Scalar>(m: &M23<T>, s: &M33<T>) -> M22<T> {
    let ms = mat23_mul33(m, s);
    let mut r = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = ms[i][0] * m[j][0] + ms[i][1] * m[j][1] + ms[i][2] * m[j][2];
        }
    }
    r
}

/// m^T (3x2) * g (2x2) * m (2x3) -> 3x3
#[inline]
pub fn sandwich23_t<T: Scalar>(m: &M23<T>, g: &M22<T>) -> M33<T> {
    let mut r = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = T::zero();
            for a in 0..2 {
                for b in 0..2 {
                    acc = acc + m[a][i] * g[a][b] * m[b][j];
                }
            }
            r[i][j] = acc;
        }
    }
    r
}

/// g (2x2) * m (2x3) -> 2x3
#[inline]
pub fn mat22_mul23<T: Scalar>(g: &M22<T>, m: &M23<T>) -> M23<T> {
    let mut r = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            r[i][j] = g[i][0] * m[0][j] + g[i][1] * m[1][j];
        }
    }
    r
}

#[inline]
pub fn det22<T: Scalar>(m: &M22<T>) -> T {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Inverse of a 2x2 matrix. Caller guarantees a nonzero determinant.
#[inline]
pub fn inv22<T: Scalar>(m: &M22<T>) -> M22<T> {
    let d = det22(m);
    let inv = T::one() / d;
    [
        [m[1][1] * inv, -m[0][1] * inv],
        [-m[1][0] * inv, m[0][0] * inv],
    ]
}

/// Largest eigenvalue of a symmetric 2x2 matrix.
#[inline]
pub fn max_eig22<T: Scalar>(m: &M22<T>) -> T {
    let half = sc::<T>(0.5);
    let mid = (m[0][0] + m[1][1]) * half;
    let d = (m[0][0] - m[1][1]) * half;
    let disc = (d * d + m[0][1] * m[1][0]).max(T::zero()).sqrt();
    mid + disc
}

#[inline]
pub fn quat_normalize<T: Scalar>(q: [T; 4]) -> [T; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n == T::zero() {
        return [T::one(), T::zero(), T::zero(), T::zero()];
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix from a unit quaternion `(w, x, y, z)`.
#[inline]
pub fn quat_to_rot<T: Scalar>(q: [T; 4]) -> M33<T> {
    let one = T::one();
    let two = sc::<T>(2.0);
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// d(quat_to_rot)/dq for a unit quaternion, one 3x3 slice per component.
pub fn quat_to_rot_jacobian<T: Scalar>(q: [T; 4]) -> [M33<T>; 4] {
    let two = sc::<T>(2.0);
    let four = sc::<T>(4.0);
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let z0 = T::zero();
    let d_w = [
        [z0, -z * two, y * two],
        [z * two, z0, -x * two],
        [-y * two, x * two, z0],
    ];
    let d_x = [
        [z0, y * two, z * two],
        [y * two, -x * four, -w * two],
        [z * two, w * two, -x * four],
    ];
    let d_y = [
        [-y * four, x * two, w * two],
        [x * two, z0, z * two],
        [-w * two, z * two, -y * four],
    ];
    let d_z = [
        [-z * four, -w * two, x * two],
        [w * two, -z * four, y * two],
        [x * two, y * two, z0],
    ];
    [d_w, d_x, d_y, d_z]
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// SplitMix64 seed mixer; derives independent RNG streams from one seed.
#[inline]
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub mod sh {
    //! Real spherical harmonics basis (degrees 0..=3) over a unit direction,
    //! with derivatives w.r.t. the direction for the backward pass.

    use super::{sc, V3};
    use crate::Scalar;

    pub const MAX_BASIS: usize = 16;

    pub const C0: f64 = 0.282_094_791_773_878_14;
    const C1: f64 = 0.488_602_511_902_919_92;
    const C2: [f64; 5] = [
        1.092_548_430_592_079_2,
        -1.092_548_430_592_079_2,
        0.315_391_565_252_520_05,
        -1.092_548_430_592_079_2,
        0.546_274_215_296_039_6,
    ];
    const C3: [f64; 7] = [
        -0.590_043_589_926_643_5,
        2.890_611_442_640_554,
        -0.457_045_799_464_465_8,
        0.373_176_332_590_115_4,
        -0.457_045_799_464_465_8,
        1.445_305_721_320_277,
        -0.590_043_589_926_643_5,
    ];

    pub fn basis_count(degree: usize) -> usize {
        (degree + 1) * (degree + 1)
    }

    /// Basis values at a unit direction. Entries past `basis_count(degree)`
    /// stay zero.
    pub fn eval_basis<T: Scalar>(degree: usize, dir: V3<T>) -> [T; MAX_BASIS] {
        let mut b = [T::zero(); MAX_BASIS];
        let [x, y, z] = dir;
        b[0] = sc(C0);
        if degree >= 1 {
            b[1] = sc::<T>(-C1) * y;
            b[2] = sc::<T>(C1) * z;
            b[3] = sc::<T>(-C1) * x;
        }
        if degree >= 2 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            b[4] = sc::<T>(C2[0]) * x * y;
            b[5] = sc::<T>(C2[1]) * y * z;
            b[6] = sc::<T>(C2[2]) * (sc::<T>(2.0) * zz - xx - yy);
            b[7] = sc::<T>(C2[3]) * x * z;
            b[8] = sc::<T>(C2[4]) * (xx - yy);
        }
        if degree >= 3 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            b[9] = sc::<T>(C3[0]) * y * (sc::<T>(3.0) * xx - yy);
            b[10] = sc::<T>(C3[1]) * x * y * z;
            b[11] = sc::<T>(C3[2]) * y * (sc::<T>(4.0) * zz - xx - yy);
            b[12] = sc::<T>(C3[3]) * z * (sc::<T>(2.0) * zz - sc::<T>(3.0) * xx - sc::<T>(3.0) * yy);
            b[13] = sc::<T>(C3[4]) * x * (sc::<T>(4.0) * zz - xx - yy);
            b[14] = sc::<T>(C3[5]) * z * (xx - yy);
            b[15] = sc::<T>(C3[6]) * x * (xx - sc::<T>(3.0) * yy);
        }
        b
    }

    /// Basis values plus d(basis)/d(dir) rows.
    pub fn eval_basis_grad<T: Scalar>(
        degree: usize,
        dir: V3<T>,
    ) -> ([T; MAX_BASIS], [V3<T>; MAX_BASIS]) {
        let b = eval_basis(degree, dir);
        let mut g = [[T::zero(); 3]; MAX_BASIS];
        let [x, y, z] = dir;
        let (z0, two, three, four, six) = (
            T::zero(),
            sc::<T>(2.0),
            sc::<T>(3.0),
            sc::<T>(4.0),
            sc::<T>(6.0),
        );
        if degree >= 1 {
            g[1] = [z0, sc(-C1), z0];
            g[2] = [z0, z0, sc(C1)];
            g[3] = [sc(-C1), z0, z0];
        }
        if degree >= 2 {
            g[4] = [sc::<T>(C2[0]) * y, sc::<T>(C2[0]) * x, z0];
            g[5] = [z0, sc::<T>(C2[1]) * z, sc::<T>(C2[1]) * y];
            g[6] = [
                sc::<T>(C2[2]) * (-two) * x,
                sc::<T>(C2[2]) * (-two) * y,
                sc::<T>(C2[2]) * four * z,
            ];
            g[7] = [sc::<T>(C2[3]) * z, z0, sc::<T>(C2[3]) * x];
            g[8] = [sc::<T>(C2[4]) * two * x, sc::<T>(C2[4]) * (-two) * y, z0];
        }
        if degree >= 3 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            g[9] = [
                sc::<T>(C3[0]) * six * x * y,
                sc::<T>(C3[0]) * (three * xx - three * yy),
                z0,
            ];
            g[10] = [
                sc::<T>(C3[1]) * y * z,
                sc::<T>(C3[1]) * x * z,
                sc::<T>(C3[1]) * x * y,
            ];
            g[11] = [
                sc::<T>(C3[2]) * (-two) * x * y,
                sc::<T>(C3[2]) * (four * zz - xx - three * yy),
                sc::<T>(C3[2]) * sc::<T>(8.0) * y * z,
            ];
            g[12] = [
                sc::<T>(C3[3]) * (-six) * x * z,
                sc::<T>(C3[3]) * (-six) * y * z,
                sc::<T>(C3[3]) * (six * zz - three * xx - three * yy),
            ];
            g[13] = [
                sc::<T>(C3[4]) * (four * zz - three * xx - yy),
                sc::<T>(C3[4]) * (-two) * x * y,
                sc::<T>(C3[4]) * sc::<T>(8.0) * x * z,
            ];
            g[14] = [
                sc::<T>(C3[5]) * two * x * z,
                sc::<T>(C3[5]) * (-two) * y * z,
                sc::<T>(C3[5]) * (xx - yy),
            ];
            g[15] = [
                sc::<T>(C3[6]) * (three * xx - three * yy),
                sc::<T>(C3[6]) * (-six) * x * y,
                z0,
            ];
        }
        (b, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quat_identity_is_identity_matrix() {
        let r = quat_to_rot([1.0f64, 0.0, 0.0, 0.0]);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r[i][j] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quat_jacobian_matches_finite_differences() {
        let q = quat_normalize([0.9f64, 0.2, -0.3, 0.1]);
        let jac = quat_to_rot_jacobian(q);
        let h = 1e-6;
        for c in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[c] += h;
            qm[c] -= h;
            // Raw partials of the rotation polynomial, no renormalization.
            let rp = quat_to_rot(qp);
            let rm = quat_to_rot(qm);
            for i in 0..3 {
                for j in 0..3 {
                    let fd = (rp[i][j] - rm[i][j]) / (2.0 * h);
                    assert!(
                        (jac[c][i][j] - fd).abs() < 1e-8,
                        "c={c} i={i} j={j} {} vs {}",
                        jac[c][i][j],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn sh_basis_gradient_matches_finite_differences() {
        let dir = normalize3([0.3f64, -0.5, 0.8]);
        let (_, grad) = sh::eval_basis_grad(3, dir);
        let h = 1e-6;
        for axis in 0..3 {
            let mut dp = dir;
            let mut dm = dir;
            dp[axis] += h;
            dm[axis] -= h;
            // Polynomial partials: evaluated off the unit sphere on purpose.
            let bp = sh::eval_basis(3, dp);
            let bm = sh::eval_basis(3, dm);
            for b in 0..16 {
                let fd = (bp[b] - bm[b]) / (2.0 * h);
                assert!(
                    (grad[b][axis] - fd).abs() < 1e-7,
                    "basis {b} axis {axis}: {} vs {}",
                    grad[b][axis],
                    fd
                );
            }
        }
    }

    #[test]
    fn inv22_inverts() {
        let m = [[4.0f64, 1.0], [1.5, 3.0]];
        let inv = inv22(&m);
        let id00 = m[0][0] * inv[0][0] + m[0][1] * inv[1][0];
        let id01 = m[0][0] * inv[0][1] + m[0][1] * inv[1][1];
        assert!((id00 - 1.0).abs() < 1e-14);
        assert!(id01.abs() < 1e-14);
    }

    #[test]
    fn mix_seed_spreads_inputs() {
        assert_ne!(mix_seed(1, 1), mix_seed(1, 2));
        assert_ne!(mix_seed(1, 1), mix_seed(2, 1));
        assert_eq!(mix_seed(7, 9), mix_seed(7, 9));
    }
}

//! Small vector/quaternion helpers shared by the renderer and the losses.
//!
//! Quaternions are stored as `[w, x, y, z]` arrays. Every function that turns a
//! quaternion into a rotation normalizes it first, so gradients with respect to
//! the raw (possibly unnormalized) parameters stay consistent with finite
//! differences.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = [f64; 4];

pub const QUAT_IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

#[inline]
pub fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

#[inline]
pub fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn quat_norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize(q: &Quat) -> Quat {
    let n = quat_norm(q);
    if n == 0.0 {
        return QUAT_IDENTITY;
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

pub fn quat_dot(a: &Quat, b: &Quat) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub fn quat_conj(q: &Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    let [w1, x1, y1, z1] = *a;
    let [w2, x2, y2, z2] = *b;
    [
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ]
}

/// Gradient of `L(a ⊗ b)` with respect to `a`, given `g = dL/d(a ⊗ b)`.
pub fn quat_mul_grad_left(b: &Quat, g: &Quat) -> Quat {
    let [a, bb, c, d] = *b;
    // a ⊗ b = M(b) a with rows [a -b -c -d], [b a d -c], [c -d a b], [d c -b a]
    [
        a * g[0] + bb * g[1] + c * g[2] + d * g[3],
        -bb * g[0] + a * g[1] - d * g[2] + c * g[3],
        -c * g[0] + d * g[1] + a * g[2] - bb * g[3],
        -d * g[0] - c * g[1] + bb * g[2] + a * g[3],
    ]
}

/// Back-propagates a gradient with respect to `q / |q|` onto `q`.
pub fn normalize_grad(q: &Quat, g_hat: &Quat) -> Quat {
    let n = quat_norm(q);
    let qh = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let d = quat_dot(&qh, g_hat);
    [
        (g_hat[0] - qh[0] * d) / n,
        (g_hat[1] - qh[1] * d) / n,
        (g_hat[2] - qh[2] * d) / n,
        (g_hat[3] - qh[3] * d) / n,
    ]
}

/// Rotation matrix of the normalized quaternion.
pub fn quat_to_matrix(q: &Quat) -> Mat3 {
    let [w, x, y, z] = quat_normalize(q);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Gradient with respect to the raw quaternion `q` of a loss whose gradient
/// with respect to `R(q / |q|)` is `g_r`.
pub fn quat_matrix_grad(q: &Quat, g_r: &Mat3) -> Quat {
    let [w, x, y, z] = quat_normalize(q);
    let g = |r: usize, c: usize| g_r[(r, c)];
    let gw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let gx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let gy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let gz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    normalize_grad(q, &[gw, gx, gy, gz])
}

pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let a = axis.normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    [c, a.x * s, a.y * s, a.z * s]
}

pub fn quat_from_matrix(m: &Mat3) -> Quat {
    let r = nalgebra::Rotation3::from_matrix_unchecked(*m);
    let uq = nalgebra::UnitQuaternion::from_rotation_matrix(&r);
    [uq.w, uq.i, uq.j, uq.k]
}

/// Shortest-arc rotation taking +z onto `n`. For `n` antiparallel to +z the
/// rotation is a half turn about +x.
pub fn quat_align_z(n: &Vec3) -> Quat {
    let len = n.norm();
    if len == 0.0 {
        return QUAT_IDENTITY;
    }
    let n = n / len;
    let d = n.z;
    if d < -1.0 + 1e-12 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    // q = (1 + z·n, z × n) normalized
    let axis = Vec3::z().cross(&n);
    quat_normalize(&[1.0 + d, axis.x, axis.y, axis.z])
}

/// Gradient helpers for a triangle normal `N = (p1 - p0) × (p2 - p0)`.
/// Returns dL/dp0, dL/dp1, dL/dp2 given g = dL/dN.
pub fn tri_normal_grad(p0: &Vec3, p1: &Vec3, p2: &Vec3, g: &Vec3) -> [Vec3; 3] {
    let u = p1 - p0;
    let v = p2 - p0;
    let g1 = v.cross(g);
    let g2 = g.cross(&u);
    [-(g1 + g2), g1, g2]
}

pub fn tri_normal(p0: &Vec3, p1: &Vec3, p2: &Vec3) -> Vec3 {
    (p1 - p0).cross(&(p2 - p0))
}

/// Pairwise summation, so reductions are independent of evaluation strategy.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

//! Reference evaluations written without reusing the renderer or the losses.

use crate::error::{Error, Result};
use crate::mesh::GaussianSet;
use crate::render::Camera;

type M3 = [[f64; 3]; 3];

fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

fn transpose(a: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[c][r];
        }
    }
    out
}

fn rotation_of(q: &[f64; 4]) -> M3 {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Literal compositing sum for one pixel: every Gaussian in front of the
/// camera, sorted by mean depth (index on ties), no thresholds, no low-pass.
pub fn brute_force_composite(
    gaussians: &GaussianSet,
    camera: &Camera,
    x: usize,
    y: usize,
    background: [f64; 3],
) -> [f64; 3] {
    let mut w = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            w[r][c] = camera.rotation[(r, c)];
        }
    }
    let px = x as f64 + 0.5;
    let py = y as f64 + 0.5;
    let mut layers: Vec<(f64, usize, f64, [f64; 3])> = Vec::new();
    for i in 0..gaussians.len() {
        let mu = gaussians.positions[i];
        let rel = [
            mu[0] - camera.center[0],
            mu[1] - camera.center[1],
            mu[2] - camera.center[2],
        ];
        let t: Vec<f64> = (0..3)
            .map(|r| w[r][0] * rel[0] + w[r][1] * rel[1] + w[r][2] * rel[2])
            .collect();
        if t[2] <= 0.0 {
            continue;
        }
        let r = rotation_of(&gaussians.rotations[i]);
        let s = gaussians.scales[i];
        let mut rs = r;
        for row in rs.iter_mut() {
            for c in 0..3 {
                row[c] *= s[c];
            }
        }
        let sigma = mat_mul(&rs, &transpose(&rs));
        let cam_sigma = mat_mul(&mat_mul(&w, &sigma), &transpose(&w));
        let j = [
            [camera.fx / t[2], 0.0, -camera.fx * t[0] / (t[2] * t[2])],
            [0.0, camera.fy / t[2], -camera.fy * t[1] / (t[2] * t[2])],
        ];
        let mut cov = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        acc += j[a][k] * cam_sigma[k][l] * j[b][l];
                    }
                }
                cov[a][b] = acc;
            }
        }
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let u = camera.fx * t[0] / t[2] + camera.cx;
        let v = camera.fy * t[1] / t[2] + camera.cy;
        let (dx, dy) = (px - u, py - v);
        let m = (cov[1][1] * dx * dx - (cov[0][1] + cov[1][0]) * dx * dy + cov[0][0] * dy * dy) / det;
        let alpha = gaussians.opacities[i] * (-0.5 * m).exp();
        layers.push((t[2], i, alpha, gaussians.colors[i]));
    }
    layers.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out = [0.0; 3];
    let mut trans = 1.0;
    for (_, _, alpha, c) in layers {
        for k in 0..3 {
            out[k] += c[k] * alpha * trans;
        }
        trans *= 1.0 - alpha;
    }
    for k in 0..3 {
        out[k] += trans * background[k];
    }
    out
}

/// Central differences `(f(x + h e_k) - f(x - h e_k)) / 2h` for every component.
pub fn finite_diff_gradient<F>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        x[k] = params[k] + h;
        let fp = f(&x);
        x[k] = params[k] - h;
        let fm = f(&x);
        x[k] = params[k];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteEvaluation(k));
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::QUAT_IDENTITY;
    use crate::math::Vec3;

    #[test]
    fn fd_of_square_and_constant() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_gradient(|_| 2.5, &[1.0, -4.0], 1e-4).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        assert!(finite_diff_gradient(|x| x[0].ln(), &[0.0], 1e-4).is_err());
    }

    #[test]
    fn empty_and_single_gaussian() {
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, -4.0), Vec3::zeros(), Vec3::y(), 0.8, 8, 8)
            .unwrap();
        let empty = GaussianSet::default();
        assert_eq!(brute_force_composite(&empty, &cam, 3, 3, [0.2, 0.3, 0.4]), [0.2, 0.3, 0.4]);
        // pixel (3, 3) has its centre at (3.5, 3.5); put the Gaussian there
        let f = cam.fx;
        let p = cam.center + cam.rotation.transpose() * Vec3::new(-0.5 * 4.0 / f, -0.5 * 4.0 / f, 4.0);
        let one = GaussianSet {
            positions: vec![[p.x, p.y, p.z]],
            rotations: vec![QUAT_IDENTITY],
            scales: vec![[0.1; 3]],
            colors: vec![[0.9, 0.1, 0.5]],
            opacities: vec![1.0],
        };
        let c = brute_force_composite(&one, &cam, 3, 3, [0.0; 3]);
        for k in 0..3 {
            assert!((c[k] - one.colors[0][k]).abs() < 1e-12);
        }
    }
}

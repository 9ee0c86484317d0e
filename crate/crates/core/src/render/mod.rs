//! Differentiable splatting of a Gaussian set into a pinhole camera.
//!
//! Every pixel composites the Gaussians covering it front to back, ordered by
//! the camera-space depth of their means (ties broken by index). Gaussians are
//! binned into screen tiles purely as an acceleration: the per-pixel order and
//! the set of contributions are exactly those of a full per-pixel sort.

mod camera;

pub use camera::{camera_extent, cameras_from_json, cameras_to_json, Camera, CameraRecord};

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::math::{quat_matrix_grad, quat_to_matrix, v3, Mat3, Quat, Vec3};
use crate::mesh::GaussianSet;

const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Contributions with α below this are skipped.
    pub alpha_min: f64,
    /// Compositing stops once transmittance drops below this.
    pub transmittance_min: f64,
    /// Added to the diagonal of the projected covariance (px²).
    pub lowpass: f64,
    /// Lower bound on the smallest eigenvalue of the projected covariance (px²).
    pub eigen_floor: f64,
    /// Gaussians with camera depth at or below this are culled.
    pub near: f64,
    pub background: [f64; 3],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            alpha_min: 1.0 / 255.0,
            transmittance_min: 1e-4,
            lowpass: 0.3,
            eigen_floor: 1e-9,
            near: 1e-3,
            background: [0.0; 3],
        }
    }
}

impl RenderSettings {
    /// No culling thresholds, truncation or low-pass: the literal compositing sum.
    pub fn oracle() -> Self {
        Self {
            alpha_min: 0.0,
            transmittance_min: 0.0,
            lowpass: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub rgb: Image,
    /// Accumulated opacity `1 - T` per pixel.
    pub alpha: Vec<f64>,
}

/// Gradients of a scalar loss with respect to every Gaussian attribute.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RenderGradients {
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub scales: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
}

impl RenderGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            scales: vec![[0.0; 3]; n],
            colors: vec![[0.0; 3]; n],
            opacities: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `self += k * other`
    pub fn add_scaled(&mut self, other: &RenderGradients, k: f64) {
        fn axpy<const N: usize>(a: &mut [[f64; N]], b: &[[f64; N]], k: f64) {
            for (x, y) in a.iter_mut().zip(b) {
                for c in 0..N {
                    x[c] += k * y[c];
                }
            }
        }
        axpy(&mut self.positions, &other.positions, k);
        axpy(&mut self.rotations, &other.rotations, k);
        axpy(&mut self.scales, &other.scales, k);
        axpy(&mut self.colors, &other.colors, k);
        for (x, y) in self.opacities.iter_mut().zip(&other.opacities) {
            *x += k * y;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.positions.iter().flatten().all(|x| x.is_finite())
            && self.rotations.iter().flatten().all(|x| x.is_finite())
            && self.scales.iter().flatten().all(|x| x.is_finite())
            && self.colors.iter().flatten().all(|x| x.is_finite())
            && self.opacities.iter().all(|x| x.is_finite())
    }
}

/// `Σ = R S Sᵀ Rᵀ` for the normalized quaternion `q` and scales `s`.
pub fn covariance_from(q: &Quat, s: &[f64; 3]) -> Mat3 {
    let r = quat_to_matrix(q);
    let d = Mat3::from_diagonal(&Vec3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2]));
    r * d * r.transpose()
}

/// Projected 2×2 covariance `[xx, xy, yy]` of a Gaussian with world covariance
/// `sigma` centred at `mean`, or `None` when it lies at or behind the near plane.
/// Applies the low-pass and eigenvalue floor of `settings`.
pub fn project_covariance(
    sigma: &Mat3,
    mean: &Vec3,
    camera: &Camera,
    settings: &RenderSettings,
) -> Option<[f64; 3]> {
    let p = camera.to_camera(mean);
    if p.z <= settings.near {
        return None;
    }
    let t = jacobian(&p, camera) * camera.rotation;
    let cov = t * sigma * t.transpose();
    Some(regularize_cov2(
        [cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]],
        settings,
    ))
}

fn jacobian(p: &Vec3, camera: &Camera) -> nalgebra::Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    nalgebra::Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * p.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * p.y * iz * iz,
    )
}

fn regularize_cov2(c: [f64; 3], settings: &RenderSettings) -> [f64; 3] {
    let [mut xx, xy, mut yy] = c;
    xx += settings.lowpass;
    yy += settings.lowpass;
    let half_tr = 0.5 * (xx + yy);
    let disc = (0.25 * (xx - yy) * (xx - yy) + xy * xy).sqrt();
    let lmin = half_tr - disc;
    if lmin < settings.eigen_floor {
        // shift both eigenvalues so the smaller one sits on the floor
        let shift = settings.eigen_floor - lmin;
        xx += shift;
        yy += shift;
    }
    [xx, xy, yy]
}

/// Screen-space footprint of one visible Gaussian.
#[derive(Debug, Clone)]
struct Splat {
    index: usize,
    depth: f64,
    cam: Vec3,
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    /// Inclusive pixel range `[x0, x1] × [y0, y1]`.
    bbox: [usize; 4],
}

fn project_all(g: &GaussianSet, camera: &Camera, settings: &RenderSettings) -> Vec<Splat> {
    let mut splats = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let mean = v3(g.positions[i]);
        let p = camera.to_camera(&mean);
        let opacity = g.opacities[i];
        if p.z <= settings.near || opacity < settings.alpha_min || opacity <= 0.0 {
            continue;
        }
        let sigma = covariance_from(&g.rotations[i], &g.scales[i]);
        let Some(cov) = project_covariance(&sigma, &mean, camera, settings) else {
            continue;
        };
        let det = cov[0] * cov[2] - cov[1] * cov[1];
        if !(det > 0.0) || !det.is_finite() {
            continue;
        }
        let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
        let u = camera.fx * p.x / p.z + camera.cx;
        let v = camera.fy * p.y / p.z + camera.cy;
        let (w, h) = (camera.width, camera.height);
        let bbox = if settings.alpha_min > 0.0 {
            // α = σ·exp(-½ dᵀ A d) ≥ α_min  ⇔  dᵀ A d ≤ 2 ln(σ/α_min)
            let level = 2.0 * (opacity / settings.alpha_min).ln();
            let rx = (level * cov[0]).sqrt();
            let ry = (level * cov[2]).sqrt();
            let x0 = (u - rx - 0.5).ceil();
            let x1 = (u + rx - 0.5).floor();
            let y0 = (v - ry - 0.5).ceil();
            let y1 = (v + ry - 0.5).floor();
            if x1 < 0.0 || y1 < 0.0 || x0 > (w - 1) as f64 || y0 > (h - 1) as f64 || x0 > x1 || y0 > y1
            {
                continue;
            }
            [
                x0.max(0.0) as usize,
                (x1 as usize).min(w - 1),
                y0.max(0.0) as usize,
                (y1 as usize).min(h - 1),
            ]
        } else {
            [0, w - 1, 0, h - 1]
        };
        splats.push(Splat {
            index: i,
            depth: p.z,
            cam: p,
            mean: [u, v],
            conic,
            opacity,
            color: g.colors[i],
            bbox,
        });
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    splats
}

/// Splat indices (into the depth-sorted list) overlapping each tile.
fn bin_tiles(splats: &[Splat], camera: &Camera) -> (usize, Vec<Vec<u32>>) {
    let tiles_x = camera.width.div_ceil(TILE);
    let tiles_y = camera.height.div_ceil(TILE);
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        for ty in s.bbox[2] / TILE..=s.bbox[3] / TILE {
            for tx in s.bbox[0] / TILE..=s.bbox[1] / TILE {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    (tiles_x, bins)
}

#[derive(Debug, Clone, Copy)]
struct Contribution {
    splat: u32,
    alpha: f64,
    gauss: f64,
    dx: f64,
    dy: f64,
    t_before: f64,
}

/// Collects the contributions of one pixel in compositing order and returns
/// the final transmittance.
fn composite_pixel(
    x: usize,
    y: usize,
    bin: &[u32],
    splats: &[Splat],
    settings: &RenderSettings,
    out: &mut Vec<Contribution>,
) -> f64 {
    out.clear();
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut t = 1.0;
    for &k in bin {
        let s = &splats[k as usize];
        if x < s.bbox[0] || x > s.bbox[1] || y < s.bbox[2] || y > s.bbox[3] {
            continue;
        }
        let dx = px - s.mean[0];
        let dy = py - s.mean[1];
        let [a, b, c] = s.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        let gauss = power.exp();
        let alpha = s.opacity * gauss;
        if alpha < settings.alpha_min {
            continue;
        }
        out.push(Contribution {
            splat: k,
            alpha,
            gauss,
            dx,
            dy,
            t_before: t,
        });
        t *= 1.0 - alpha;
        if t < settings.transmittance_min {
            break;
        }
    }
    t
}

pub fn render(gaussians: &GaussianSet, camera: &Camera, settings: &RenderSettings) -> RenderedImage {
    let (w, h) = (camera.width, camera.height);
    let mut rgb = Image::filled(w, h, settings.background);
    let mut alpha = vec![0.0; w * h];
    if gaussians.is_empty() {
        return RenderedImage { rgb, alpha };
    }
    let splats = project_all(gaussians, camera, settings);
    let (tiles_x, bins) = bin_tiles(&splats, camera);
    let mut contribs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let bin = &bins[(y / TILE) * tiles_x + x / TILE];
            let t = composite_pixel(x, y, bin, &splats, settings, &mut contribs);
            let mut color = [0.0; 3];
            for ct in &contribs {
                let c = splats[ct.splat as usize].color;
                let wgt = ct.alpha * ct.t_before;
                for ch in 0..3 {
                    color[ch] += c[ch] * wgt;
                }
            }
            for ch in 0..3 {
                color[ch] += t * settings.background[ch];
            }
            rgb.set_pixel(x, y, color);
            alpha[y * w + x] = 1.0 - t;
        }
    }
    RenderedImage { rgb, alpha }
}

/// Adjoint of [`render`]: gradients of a scalar loss given `upstream = dL/dC`
/// per pixel (same layout as the rendered RGB image).
pub fn render_backward(
    gaussians: &GaussianSet,
    camera: &Camera,
    settings: &RenderSettings,
    upstream: &Image,
) -> RenderGradients {
    let n = gaussians.len();
    let mut grads = RenderGradients::zeros(n);
    if n == 0 {
        return grads;
    }
    let splats = project_all(gaussians, camera, settings);
    let (tiles_x, bins) = bin_tiles(&splats, camera);

    // screen-space accumulators per splat: du, dv, d(conic a, b, c), dσ
    let mut g2d = vec![[0.0f64; 6]; splats.len()];
    let mut contribs = Vec::new();
    for y in 0..camera.height {
        for x in 0..camera.width {
            let up = upstream.pixel(x, y);
            if up == [0.0; 3] {
                continue;
            }
            let bin = &bins[(y / TILE) * tiles_x + x / TILE];
            composite_pixel(x, y, bin, &splats, settings, &mut contribs);
            // colour seen behind the current contribution, per unit transmittance
            let mut behind = settings.background;
            for ct in contribs.iter().rev() {
                let s = &splats[ct.splat as usize];
                let wgt = ct.alpha * ct.t_before;
                let mut g_alpha = 0.0;
                for ch in 0..3 {
                    grads.colors[s.index][ch] += up[ch] * wgt;
                    g_alpha += up[ch] * ct.t_before * (s.color[ch] - behind[ch]);
                    behind[ch] = s.color[ch] * ct.alpha + (1.0 - ct.alpha) * behind[ch];
                }
                let acc = &mut g2d[ct.splat as usize];
                acc[5] += g_alpha * ct.gauss;
                let g_power = g_alpha * ct.alpha;
                let [a, b, c] = s.conic;
                acc[0] += g_power * (a * ct.dx + b * ct.dy);
                acc[1] += g_power * (b * ct.dx + c * ct.dy);
                acc[2] += g_power * (-0.5 * ct.dx * ct.dx);
                acc[3] += g_power * (-ct.dx * ct.dy);
                acc[4] += g_power * (-0.5 * ct.dy * ct.dy);
            }
        }
    }

    for (s, acc) in splats.iter().zip(&g2d) {
        let i = s.index;
        grads.opacities[i] += acc[5];
        let (gm, gq, gs) = splat_backward(gaussians, i, s, acc, camera);
        for c in 0..3 {
            grads.positions[i][c] += gm[c];
            grads.scales[i][c] += gs[c];
        }
        for c in 0..4 {
            grads.rotations[i][c] += gq[c];
        }
    }
    grads
}

/// Chains screen-space gradients of one splat back to μ, q and s.
fn splat_backward(
    g: &GaussianSet,
    i: usize,
    s: &Splat,
    acc: &[f64; 6],
    camera: &Camera,
) -> ([f64; 3], [f64; 4], [f64; 3]) {
    let [gu, gv, ga, gb, gc, _] = *acc;
    let p = s.cam;
    let (fx, fy) = (camera.fx, camera.fy);
    let iz = 1.0 / p.z;

    // conic A = Σ'^{-1}:  dL/dΣ' = -A G_A A
    let a_mat = nalgebra::Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let g_a = nalgebra::Matrix2::new(ga, 0.5 * gb, 0.5 * gb, gc);
    let g_cov2 = -(a_mat * g_a * a_mat);

    let rq = quat_to_matrix(&g.rotations[i]);
    let sc = g.scales[i];
    let d = Mat3::from_diagonal(&Vec3::new(sc[0] * sc[0], sc[1] * sc[1], sc[2] * sc[2]));
    let sigma = rq * d * rq.transpose();
    let jac = jacobian(&p, camera);
    let t = jac * camera.rotation;

    let g_sigma = t.transpose() * g_cov2 * t;
    let g_t = 2.0 * g_cov2 * t * sigma;
    let g_j = g_t * camera.rotation.transpose();

    let mut gp = Vec3::zeros();
    gp.x += g_j[(0, 2)] * (-fx * iz * iz) + gu * fx * iz;
    gp.y += g_j[(1, 2)] * (-fy * iz * iz) + gv * fy * iz;
    gp.z += g_j[(0, 0)] * (-fx * iz * iz)
        + g_j[(0, 2)] * (2.0 * fx * p.x * iz * iz * iz)
        + g_j[(1, 1)] * (-fy * iz * iz)
        + g_j[(1, 2)] * (2.0 * fy * p.y * iz * iz * iz)
        - gu * fx * p.x * iz * iz
        - gv * fy * p.y * iz * iz;
    let gm = camera.rotation.transpose() * gp;

    let g_r = 2.0 * g_sigma * rq * d;
    let gq = quat_matrix_grad(&g.rotations[i], &g_r);
    let rtgr = rq.transpose() * g_sigma * rq;
    let gs = [
        2.0 * sc[0] * rtgr[(0, 0)],
        2.0 * sc[1] * rtgr[(1, 1)],
        2.0 * sc[2] * rtgr[(2, 2)],
    ];
    ([gm.x, gm.y, gm.z], gq, gs)
}

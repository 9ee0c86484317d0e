//! Finite-difference check of every analytic gradient on small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::image::Image;
use crate::loss::{
    flat_loss, geo_loss, image_loss, iso_loss, pos_loss, rigid_loss, rot_loss, scale_loss,
    FrameView, GeoInputs, LossConfig, TermGrad, View,
};
use crate::math::{quat_normalize, Quat, Vec3};
use crate::mesh::{build_adjacency, default_lambda_w, signed_dihedral_angles, Adjacency, GaussianSet, Topology};
use crate::render::{render, render_backward, Camera, RenderSettings};

use super::{finite_diff_gradient, make_grid};

/// Relative tolerance every smooth check must meet.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckRow {
    pub name: String,
    pub components: usize,
    /// Worst relative error (or, for one-sided rows, worst relative distance
    /// outside the bracket formed by the one-sided differences).
    pub max_error: f64,
    pub pass: bool,
}

impl GradcheckRow {
    fn new(name: &str, components: usize, max_error: f64) -> Self {
        Self {
            name: name.to_string(),
            components,
            max_error,
            pass: max_error < GRADCHECK_TOLERANCE,
        }
    }
}

/// Worst `|a - n| / max(|a|, |n|)` with components far below the largest
/// numeric entry compared against that floor instead.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().chain(analytic).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-6 * scale).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Checks that `analytic` lies between the forward and backward differences.
fn one_sided_error<F: FnMut(&[f64]) -> f64>(mut f: F, params: &[f64], analytic: &[f64], h: f64) -> f64 {
    let f0 = f(params);
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        x[k] = params[k] + h;
        let fwd = (f(&x) - f0) / h;
        x[k] = params[k] - h;
        let bwd = (f0 - f(&x)) / h;
        x[k] = params[k];
        let (lo, hi) = (fwd.min(bwd), fwd.max(bwd));
        let a = analytic[k];
        let outside = if a < lo {
            lo - a
        } else if a > hi {
            a - hi
        } else {
            0.0
        };
        worst = worst.max(outside / a.abs().max(hi.abs()).max(lo.abs()).max(1e-9));
    }
    worst
}

fn flatten3(v: &[[f64; 3]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn flatten4(v: &[[f64; 4]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn unflatten3(v: &[f64]) -> Vec<[f64; 3]> {
    v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn unflatten4(v: &[f64]) -> Vec<[f64; 4]> {
    v.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect()
}

fn jitter(rng: &mut ChaCha8Rng, p: &[[f64; 3]], amp: f64) -> Vec<[f64; 3]> {
    p.iter()
        .map(|q| {
            [
                q[0] + rng.gen_range(-amp..amp),
                q[1] + rng.gen_range(-amp..amp),
                q[2] + rng.gen_range(-amp..amp),
            ]
        })
        .collect()
}

fn random_quats(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<Quat> {
    (0..n)
        .map(|_| {
            quat_normalize(&[
                1.0,
                rng.gen_range(-spread..spread),
                rng.gen_range(-spread..spread),
                rng.gen_range(-spread..spread),
            ])
        })
        .collect()
}

/// Random 3×3-quad patch with three frames: reference, previous, current.
pub struct PatchFixture {
    pub topology: Topology,
    pub frame0: Vec<[f64; 3]>,
    pub prev: Vec<[f64; 3]>,
    pub cur: Vec<[f64; 3]>,
    pub rot_prev: Vec<Quat>,
    pub rot_cur: Vec<Quat>,
    pub adjacency: Adjacency,
}

impl PatchFixture {
    pub fn random(rng: &mut ChaCha8Rng) -> Result<Self> {
        let (topology, grid) = make_grid(3, 3, 1.0);
        let frame0 = jitter(rng, &grid, 0.15);
        let prev = jitter(rng, &frame0, 0.1);
        let cur = jitter(rng, &prev, 0.1);
        let n = grid.len();
        let rot_prev = random_quats(rng, n, 0.3);
        let rot_cur = random_quats(rng, n, 0.3);
        let lw = default_lambda_w(&topology, &frame0);
        let adjacency = build_adjacency(&topology, &frame0, lw)?;
        Ok(Self {
            topology,
            frame0,
            prev,
            cur,
            rot_prev,
            rot_cur,
            adjacency,
        })
    }

    fn params(&self) -> Vec<f64> {
        let mut p = flatten3(&self.cur);
        p.extend(flatten4(&self.rot_cur));
        p
    }

    fn split(&self, p: &[f64]) -> (Vec<[f64; 3]>, Vec<Quat>) {
        let k = self.cur.len() * 3;
        (unflatten3(&p[..k]), unflatten4(&p[k..]))
    }
}

fn term_row<F>(name: &str, fx: &PatchFixture, eval: F) -> Result<GradcheckRow>
where
    F: Fn(&[[f64; 3]], &[Quat]) -> TermGrad,
{
    let params = fx.params();
    let (p, q) = fx.split(&params);
    let t = eval(&p, &q);
    let mut analytic = flatten3(&t.positions);
    analytic.extend(flatten4(&t.rotations));
    let numeric = finite_diff_gradient(
        |x| {
            let (p, q) = fx.split(x);
            eval(&p, &q).value
        },
        &params,
        1e-6,
    )?;
    Ok(GradcheckRow::new(name, params.len(), max_relative_error(&analytic, &numeric)))
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let mut img = Image::new(w, h);
    img.data.iter_mut().for_each(|v| *v = rng.gen_range(0.05..0.95));
    img
}

/// A camera 4 units down +z from the origin looking back at it.
pub fn small_camera(size: usize) -> Result<Camera> {
    Camera::look_at(Vec3::new(0.0, 0.0, -4.0), Vec3::zeros(), Vec3::y(), 0.8, size, size)
}

/// Up to `max` Gaussians in front of [`small_camera`], overlapping the view.
pub fn random_scene(rng: &mut ChaCha8Rng, max: usize) -> GaussianSet {
    let n = rng.gen_range(1..=max);
    GaussianSet {
        positions: (0..n)
            .map(|_| {
                [
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect(),
        rotations: random_quats(rng, n, 1.0),
        scales: (0..n)
            .map(|_| {
                [
                    rng.gen_range(0.15..0.6),
                    rng.gen_range(0.15..0.6),
                    rng.gen_range(0.15..0.6),
                ]
            })
            .collect(),
        colors: (0..n)
            .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
            .collect(),
        opacities: (0..n).map(|_| rng.gen_range(0.3..0.95)).collect(),
    }
}

fn render_rows(rng: &mut ChaCha8Rng, settings: &RenderSettings, tag: &str) -> Result<Vec<GradcheckRow>> {
    let cam = small_camera(8)?;
    let mut worst = [0.0f64; 5];
    let mut counts = [0usize; 5];
    for _ in 0..5 {
        let g = random_scene(rng, 10);
        let up = random_image(rng, 8, 8);
        let loss = |g: &GaussianSet| -> f64 {
            let img = render(g, &cam, settings);
            img.rgb.data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
        };
        let an = render_backward(&g, &cam, settings, &up);
        // μ, q, s, c, σ with steps of 1e-4 times the attribute's typical size
        let groups: [(Vec<f64>, Vec<f64>, f64); 5] = [
            (flatten3(&g.positions), flatten3(&an.positions), 1e-4),
            (flatten4(&g.rotations), flatten4(&an.rotations), 1e-4),
            (flatten3(&g.scales), flatten3(&an.scales), 1e-4 * 0.3),
            (flatten3(&g.colors), flatten3(&an.colors), 1e-4),
            (g.opacities.clone(), an.opacities.clone(), 1e-4),
        ];
        for (k, (params, analytic, h)) in groups.iter().enumerate() {
            let numeric = finite_diff_gradient(
                |x| {
                    let mut gg = g.clone();
                    match k {
                        0 => gg.positions = unflatten3(x),
                        1 => gg.rotations = unflatten4(x),
                        2 => gg.scales = unflatten3(x),
                        3 => gg.colors = unflatten3(x),
                        _ => gg.opacities = x.to_vec(),
                    }
                    loss(&gg)
                },
                params,
                *h,
            )?;
            worst[k] = worst[k].max(max_relative_error(analytic, &numeric));
            counts[k] += params.len();
        }
    }
    let names = ["μ", "q", "s", "c", "σ"];
    Ok((0..5)
        .map(|k| GradcheckRow::new(&format!("render {tag} d{}", names[k]), counts[k], worst[k]))
        .collect())
}

/// Runs every check; each row passes at [`GRADCHECK_TOLERANCE`].
pub fn run_gradcheck(seed: u64) -> Result<Vec<GradcheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();

    // image loss, with and without a mask
    let a = random_image(&mut rng, 16, 16);
    let b = random_image(&mut rng, 16, 16);
    let mask: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..1.0)).collect();
    for (name, m) in [("image", None), ("image (masked)", Some(mask.as_slice()))] {
        let l = image_loss(&a, &b, m, 0.2, 11)?;
        let numeric = finite_diff_gradient(
            |x| {
                let img = Image {
                    width: 16,
                    height: 16,
                    data: x.to_vec(),
                };
                image_loss(&img, &b, m, 0.2, 11).map(|l| l.value).unwrap_or(f64::NAN)
            },
            &a.data,
            1e-6,
        )?;
        rows.push(GradcheckRow::new(name, a.data.len(), max_relative_error(&l.grad.data, &numeric)));
    }

    // scale loss away from the kinks: unique minimum, cap crossed by a margin
    let init: Vec<[f64; 3]> = (0..9).map(|_| [rng.gen_range(0.5..1.0); 3]).collect();
    let s: Vec<[f64; 3]> = init
        .iter()
        .map(|i| [i[0] * 0.2, i[1] * rng.gen_range(0.6..1.2), i[2] * rng.gen_range(1.7..2.2)])
        .collect();
    let (_, g) = scale_loss(&s, &init, 1.5);
    let numeric = finite_diff_gradient(|x| scale_loss(&unflatten3(x), &init, 1.5).0, &flatten3(&s), 1e-6)?;
    rows.push(GradcheckRow::new("scale", s.len() * 3, max_relative_error(&flatten3(&g), &numeric)));
    // exactly at an argmin tie and exactly at the cap
    let s_kink = vec![[0.3, 0.3, 0.3], [0.5, 1.5, 0.9]];
    let init_kink = vec![[1.0; 3]; 2];
    let (_, g) = scale_loss(&s_kink, &init_kink, 1.5);
    let err = one_sided_error(|x| scale_loss(&unflatten3(x), &init_kink, 1.5).0, &flatten3(&s_kink), &flatten3(&g), 1e-6);
    rows.push(GradcheckRow::new("scale (one-sided)", 6, err));

    // physical and topological priors on a random patch
    let fx = PatchFixture::random(&mut rng)?;
    let adj = &fx.adjacency;
    let prev = FrameView {
        positions: &fx.prev,
        rotations: &fx.rot_prev,
    };
    rows.push(term_row("rigid", &fx, |p, q| {
        rigid_loss(prev, FrameView { positions: p, rotations: q }, adj)
    })?);
    rows.push(term_row("rot", &fx, |p, q| {
        rot_loss(prev, FrameView { positions: p, rotations: q }, adj)
    })?);
    rows.push(term_row("iso", &fx, |p, _| iso_loss(&fx.frame0, p, adj))?);
    rows.push(term_row("pos", &fx, |p, _| pos_loss(p, adj))?);
    let angles0 = signed_dihedral_angles(&fx.frame0, adj);
    rows.push(term_row("flat", &fx, |p, _| flat_loss(p, &angles0, adj))?);
    // iso at its kink: every edge length unchanged
    let t = iso_loss(&fx.frame0, &fx.frame0, adj);
    let err = one_sided_error(
        |x| iso_loss(&fx.frame0, &unflatten3(x), adj).value,
        &flatten3(&fx.frame0),
        &flatten3(&t.positions),
        1e-6,
    );
    rows.push(GradcheckRow::new("iso (one-sided)", fx.frame0.len() * 3, err));

    // renderer backward pass
    rows.extend(render_rows(&mut rng, &RenderSettings::oracle(), "oracle")?);
    let smooth = RenderSettings {
        alpha_min: 0.0,
        transmittance_min: 0.0,
        ..RenderSettings::default()
    };
    rows.extend(render_rows(&mut rng, &smooth, "low-pass")?);

    // the whole tracking objective through the renderer
    rows.push(geo_row(&mut rng, &fx, &smooth)?);
    Ok(rows)
}

fn geo_row(rng: &mut ChaCha8Rng, fx: &PatchFixture, settings: &RenderSettings) -> Result<GradcheckRow> {
    let n = fx.cur.len();
    let centre = [1.5, 1.5, 0.0];
    let shift = |p: &[[f64; 3]]| -> Vec<[f64; 3]> {
        p.iter()
            .map(|q| [q[0] - centre[0], q[1] - centre[1], q[2] - centre[2]])
            .collect()
    };
    let cam = Camera::look_at(Vec3::new(0.3, -0.4, 6.0), Vec3::zeros(), Vec3::y(), 0.9, 16, 16)?;
    let views = vec![View::new(cam, random_image(rng, 16, 16))];
    let frame0 = shift(&fx.frame0);
    let prev_pos = shift(&fx.prev);
    let adjacency = build_adjacency(&fx.topology, &frame0, fx.adjacency.lambda_w)?;
    let angles0 = signed_dihedral_angles(&frame0, &adjacency);
    let config = LossConfig {
        lambda_rigid: 1.0,
        lambda_pos: 1.0,
        lambda_flat: 1.0,
        ..LossConfig::default()
    };
    let colors: Vec<[f64; 3]> = (0..n)
        .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    let build = |p: Vec<[f64; 3]>, q: Vec<Quat>| GaussianSet {
        positions: p,
        rotations: q,
        scales: vec![[0.35, 0.3, 0.05]; n],
        colors: colors.clone(),
        opacities: vec![0.9; n],
    };
    let eval = |g: &GaussianSet| {
        let inputs = GeoInputs {
            gaussians: g,
            previous: FrameView {
                positions: &prev_pos,
                rotations: &fx.rot_prev,
            },
            frame0_positions: &frame0,
            frame0_angles: &angles0,
            adjacency: &adjacency,
            views: &views,
            render: settings,
        };
        geo_loss(&inputs, &config)
    };
    let cur = shift(&fx.cur);
    let g = build(cur.clone(), fx.rot_cur.clone());
    let b = eval(&g)?;
    let mut params = flatten3(&cur);
    params.extend(flatten4(&fx.rot_cur));
    let mut analytic = flatten3(&b.grads.positions);
    analytic.extend(flatten4(&b.grads.rotations));
    let numeric = finite_diff_gradient(
        |x| {
            let g = build(unflatten3(&x[..3 * n]), unflatten4(&x[3 * n..]));
            eval(&g).map(|b| b.total).unwrap_or(f64::NAN)
        },
        &params,
        1e-5,
    )?;
    Ok(GradcheckRow::new("geo total", params.len(), max_relative_error(&analytic, &numeric)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(max_relative_error(&[1.0, 0.0], &[1.0, 1e-12]), 1e-12 / 1e-6);
        assert!(max_relative_error(&[2.0], &[1.0]) > 0.4);
    }
}

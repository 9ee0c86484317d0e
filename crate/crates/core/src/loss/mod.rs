//! Stage objectives: `L_init = L_image + λ_scale L_scale` for the first frame
//! and `L_geo = L_image + L_phy + L_topo` for tracking.

mod geometric;
mod image;

pub use geometric::{
    flat_loss, iso_loss, min_component, pos_loss, rigid_loss, rot_loss, scale_loss, FrameView,
    TermGrad,
};
pub use image::{image_loss, ImageLoss};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh::{Adjacency, Dihedral, GaussianSet};
use crate::render::{render, render_backward, Camera, RenderGradients, RenderSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_image: f64,
    pub lambda_scale: f64,
    /// Off by default; the final formulation keeps only rotation and isometry
    /// in the physical prior.
    pub lambda_rigid: f64,
    pub lambda_rot: f64,
    pub lambda_iso: f64,
    pub lambda_pos: f64,
    pub lambda_flat: f64,
    /// Scales above `scale_cap × s_init` are penalized.
    pub scale_cap: f64,
    /// Edge-weight falloff; `None` uses the inverse squared mean frame-0 edge length.
    pub lambda_w: Option<f64>,
    pub ssim_window: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_image: 0.2,
            lambda_scale: 10.0,
            lambda_rigid: 0.0,
            lambda_rot: 20.0,
            lambda_iso: 20.0,
            lambda_pos: 1e3,
            lambda_flat: 2e-4,
            scale_cap: 1.5,
            lambda_w: None,
            ssim_window: 11,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_scale", self.lambda_scale),
            ("lambda_rigid", self.lambda_rigid),
            ("lambda_rot", self.lambda_rot),
            ("lambda_iso", self.lambda_iso),
            ("lambda_pos", self.lambda_pos),
            ("lambda_flat", self.lambda_flat),
            ("scale_cap", self.scale_cap),
        ];
        for (name, v) in weights {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be a finite value ≥ 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_image) {
            return Err(Error::Config(format!(
                "lambda_image = {} must lie in [0, 1]",
                self.lambda_image
            )));
        }
        if let Some(w) = self.lambda_w {
            if !(w >= 0.0) {
                return Err(Error::Config(format!("lambda_w = {w} must be ≥ 0")));
            }
        }
        if self.ssim_window == 0 || self.ssim_window % 2 == 0 {
            return Err(Error::Config(format!(
                "ssim_window = {} must be odd",
                self.ssim_window
            )));
        }
        Ok(())
    }
}

/// One calibrated observation.
#[derive(Debug, Clone)]
pub struct View {
    pub camera: Camera,
    pub target: Image,
    /// Optional per-pixel weights in `[0, 1]`.
    pub mask: Option<Vec<f64>>,
}

impl View {
    pub fn new(camera: Camera, target: Image) -> Self {
        Self {
            camera,
            target,
            mask: None,
        }
    }

    pub fn downscaled(&self, factor: usize) -> View {
        if factor <= 1 {
            return self.clone();
        }
        let target = self.target.downsample(factor);
        let mask = self.mask.as_ref().map(|m| {
            let (w, h) = (target.width, target.height);
            let mut out = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += m[(y * factor + dy) * self.target.width + x * factor + dx];
                        }
                    }
                    out[y * w + x] = acc / (factor * factor) as f64;
                }
            }
            out
        });
        View {
            camera: self.camera.downscaled(factor),
            target,
            mask,
        }
    }
}

/// Per-term values of a stage objective plus the gradient of its total.
#[derive(Debug, Clone, Default)]
pub struct LossBreakdown {
    pub image: f64,
    pub scale: f64,
    pub rigid: f64,
    pub rot: f64,
    pub iso: f64,
    pub pos: f64,
    pub flat: f64,
    /// `λ_rigid L_rigid + λ_rot L_rot + λ_iso L_iso`
    pub phy: f64,
    /// `λ_pos L_pos + λ_flat L_flat`
    pub topo: f64,
    pub total: f64,
    pub grads: RenderGradients,
    /// Interior edges excluded from the flattening term.
    pub skipped_edges: usize,
    /// Vertices excluded from the position term.
    pub skipped_vertices: usize,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.image, self.scale, self.rigid, self.rot, self.iso, self.pos, self.flat,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
            && self.grads.all_finite()
    }
}

/// Mean image loss over all views and its gradient with respect to every
/// Gaussian attribute.
pub fn multiview_image_term(
    gaussians: &GaussianSet,
    views: &[View],
    settings: &RenderSettings,
    config: &LossConfig,
) -> Result<(f64, RenderGradients)> {
    let n = gaussians.len();
    if views.is_empty() {
        return Ok((0.0, RenderGradients::zeros(n)));
    }
    let per_view: Vec<Result<(f64, RenderGradients)>> = views
        .par_iter()
        .map(|v| {
            let img = render(gaussians, &v.camera, settings);
            let l = image_loss(
                &img.rgb,
                &v.target,
                v.mask.as_deref(),
                config.lambda_image,
                config.ssim_window,
            )?;
            let g = render_backward(gaussians, &v.camera, settings, &l.grad);
            Ok((l.value, g))
        })
        .collect();
    let k = 1.0 / views.len() as f64;
    let mut total = 0.0;
    let mut grads = RenderGradients::zeros(n);
    for r in per_view {
        let (v, g) = r?;
        total += k * v;
        grads.add_scaled(&g, k);
    }
    Ok((total, grads))
}

/// First-frame objective `L_image + λ_scale L_scale`.
pub fn init_loss(
    gaussians: &GaussianSet,
    scale_init: &[[f64; 3]],
    views: &[View],
    settings: &RenderSettings,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    let (image, mut grads) = multiview_image_term(gaussians, views, settings, config)?;
    let (scale, g_scale) = scale_loss(&gaussians.scales, scale_init, config.scale_cap);
    for (g, d) in grads.scales.iter_mut().zip(&g_scale) {
        for c in 0..3 {
            g[c] += config.lambda_scale * d[c];
        }
    }
    Ok(LossBreakdown {
        image,
        scale,
        total: image + config.lambda_scale * scale,
        grads,
        ..Default::default()
    })
}

/// Everything the tracking objective needs for frame `t`.
#[derive(Debug, Clone, Copy)]
pub struct GeoInputs<'a> {
    pub gaussians: &'a GaussianSet,
    pub previous: FrameView<'a>,
    pub frame0_positions: &'a [[f64; 3]],
    /// Signed dihedral angles of frame 0, aligned with `adjacency.interior_edges`.
    pub frame0_angles: &'a [Dihedral],
    pub adjacency: &'a Adjacency,
    pub views: &'a [View],
    pub render: &'a RenderSettings,
}

/// Geometric priors only (everything in `L_geo` but the image term), with
/// their weighted gradient.
pub fn geo_priors(inputs: &GeoInputs, config: &LossConfig) -> LossBreakdown {
    let g = inputs.gaussians;
    let n = g.len();
    let cur = FrameView {
        positions: &g.positions,
        rotations: &g.rotations,
    };
    let adj = inputs.adjacency;
    let mut out = LossBreakdown {
        grads: RenderGradients::zeros(n),
        ..Default::default()
    };
    let mut accumulate = |t: &TermGrad, w: f64| {
        if w == 0.0 {
            return;
        }
        for i in 0..n {
            for c in 0..3 {
                out.grads.positions[i][c] += w * t.positions[i][c];
            }
            for c in 0..4 {
                out.grads.rotations[i][c] += w * t.rotations[i][c];
            }
        }
    };
    let rigid = if config.lambda_rigid > 0.0 {
        rigid_loss(inputs.previous, cur, adj)
    } else {
        TermGrad::default()
    };
    accumulate(&rigid, config.lambda_rigid);
    let rot = rot_loss(inputs.previous, cur, adj);
    accumulate(&rot, config.lambda_rot);
    let iso = iso_loss(inputs.frame0_positions, &g.positions, adj);
    accumulate(&iso, config.lambda_iso);
    let pos = pos_loss(&g.positions, adj);
    accumulate(&pos, config.lambda_pos);
    let flat = flat_loss(&g.positions, inputs.frame0_angles, adj);
    accumulate(&flat, config.lambda_flat);

    out.rigid = rigid.value;
    out.rot = rot.value;
    out.iso = iso.value;
    out.pos = pos.value;
    out.flat = flat.value;
    out.skipped_vertices = pos.skipped;
    out.skipped_edges = flat.skipped;
    out.phy = config.lambda_rigid * out.rigid
        + config.lambda_rot * out.rot
        + config.lambda_iso * out.iso;
    out.topo = config.lambda_pos * out.pos + config.lambda_flat * out.flat;
    out.total = out.phy + out.topo;
    out
}

/// Tracking objective `L_image + L_phy + L_topo`.
pub fn geo_loss(inputs: &GeoInputs, config: &LossConfig) -> Result<LossBreakdown> {
    let mut out = geo_priors(inputs, config);
    let (image, grads) =
        multiview_image_term(inputs.gaussians, inputs.views, inputs.render, config)?;
    out.image = image;
    out.total = image + out.phy + out.topo;
    out.grads.add_scaled(&grads, 1.0);
    Ok(out)
}

//! Adam with per-attribute learning rates and freezing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::quat_normalize;
use crate::mesh::GaussianSet;
use crate::render::RenderGradients;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First and second moment estimates for one parameter array.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Moments {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place. `name` labels the
/// attribute in the error raised for a non-finite gradient.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    lr: f64,
    hyper: &AdamHyper,
    name: &'static str,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "{name}: {} parameters, {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(name));
    }
    if moments.m.len() != params.len() {
        *moments = Moments::new(params.len());
    }
    moments.step += 1;
    let t = moments.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        let m = hyper.beta1 * moments.m[k] + (1.0 - hyper.beta1) * g;
        let v = hyper.beta2 * moments.v[k] + (1.0 - hyper.beta2) * g * g;
        moments.m[k] = m;
        moments.v[k] = v;
        params[k] -= lr * (m / c1) / ((v / c2).sqrt() + hyper.eps);
    }
    Ok(())
}

/// Which attribute groups a stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeMask {
    pub positions: bool,
    pub rotations: bool,
    pub scales: bool,
    pub colors: bool,
    pub opacities: bool,
}

/// Per-attribute step sizes. The position rate is in units of the scene scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub positions: f64,
    pub rotations: f64,
    pub scales: f64,
    pub colors: f64,
    pub opacities: f64,
}

/// Adam state for a whole Gaussian set.
#[derive(Debug, Clone, Default)]
pub struct GaussianAdam {
    pub positions: Moments,
    pub rotations: Moments,
    pub scales: Moments,
    pub colors: Moments,
    pub opacities: Moments,
    pub hyper: AdamHyper,
}

impl GaussianAdam {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            ..Default::default()
        }
    }

    /// Updates the unfrozen groups, then projects back onto the feasible set:
    /// unit quaternions, scales at least `scale_floor`, colours in `[0, 1]`.
    /// `lr_factor` multiplies every rate (schedule decay).
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        g: &mut GaussianSet,
        grads: &RenderGradients,
        mask: &AttributeMask,
        lr: &LearningRates,
        scene_scale: f64,
        lr_factor: f64,
        scale_floor: f64,
    ) -> Result<()> {
        let h = self.hyper;
        if mask.positions {
            adam_step(
                g.positions.as_flattened_mut(),
                grads.positions.as_flattened(),
                &mut self.positions,
                lr.positions * scene_scale * lr_factor,
                &h,
                "positions",
            )?;
        }
        if mask.rotations {
            adam_step(
                g.rotations.as_flattened_mut(),
                grads.rotations.as_flattened(),
                &mut self.rotations,
                lr.rotations * lr_factor,
                &h,
                "rotations",
            )?;
            for q in &mut g.rotations {
                *q = quat_normalize(q);
            }
        }
        if mask.scales {
            adam_step(
                g.scales.as_flattened_mut(),
                grads.scales.as_flattened(),
                &mut self.scales,
                lr.scales * lr_factor,
                &h,
                "scales",
            )?;
            for s in g.scales.as_flattened_mut() {
                *s = s.max(scale_floor);
            }
        }
        if mask.colors {
            adam_step(
                g.colors.as_flattened_mut(),
                grads.colors.as_flattened(),
                &mut self.colors,
                lr.colors * lr_factor,
                &h,
                "colors",
            )?;
            for c in g.colors.as_flattened_mut() {
                *c = c.clamp(0.0, 1.0);
            }
        }
        if mask.opacities {
            adam_step(
                &mut g.opacities,
                &grads.opacities,
                &mut self.opacities,
                lr.opacities * lr_factor,
                &h,
                "opacities",
            )?;
            for o in &mut g.opacities {
                *o = o.clamp(1e-6, 1.0);
            }
        }
        Ok(())
    }
}

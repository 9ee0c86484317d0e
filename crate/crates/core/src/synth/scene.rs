//! Camera rig and rendered ground-truth sequences.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{quat_align_z, v3, Vec3};
use crate::mesh::{initial_scales, vertex_normals, GaussianSet, Topology};
use crate::pipeline::PipelineConfig;
use crate::render::{render, Camera, RenderSettings};

use super::{deform_sequence, make_quad_sphere, DeformPreset, TextureSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConfig {
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    /// Distance from the origin in units of the scene's bounding radius.
    pub distance: f64,
    pub elevation_deg: f64,
    pub fov_deg: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            cameras: 6,
            width: 64,
            height: 64,
            distance: 3.0,
            elevation_deg: 25.0,
            fov_deg: 50.0,
        }
    }
}

/// `count` cameras evenly spaced on a ring above the equator, all looking at
/// `target`, y up.
pub fn camera_rig(rig: &RigConfig, target: Vec3, radius: f64) -> Result<Vec<Camera>> {
    if !(2..=16).contains(&rig.cameras) {
        return Err(Error::Config(format!(
            "camera count {} outside [2, 16]",
            rig.cameras
        )));
    }
    let elev = rig.elevation_deg.to_radians();
    let d = rig.distance * radius;
    (0..rig.cameras)
        .map(|k| {
            let az = std::f64::consts::TAU * k as f64 / rig.cameras as f64;
            let eye = target
                + Vec3::new(d * elev.cos() * az.sin(), d * elev.sin(), d * elev.cos() * az.cos());
            Camera::look_at(eye, target, Vec3::y(), rig.fov_deg.to_radians(), rig.width, rig.height)
        })
        .collect()
}

/// Half the shortest one-ring distance per vertex (the isotropic start scale).
pub fn half_min_ring_distance(topology: &Topology, positions: &[[f64; 3]]) -> Result<Vec<f64>> {
    Ok(initial_scales(topology, positions)?.iter().map(|s| s[0]).collect())
}

/// Flat discs aligned with the current normals, tangential radius `s0`.
pub fn ground_truth_gaussians(
    topology: &Topology,
    positions: &[[f64; 3]],
    colors: &[[f64; 3]],
    s0: &[f64],
    flat_ratio: f64,
) -> GaussianSet {
    let normals = vertex_normals(topology, positions, None);
    GaussianSet {
        positions: positions.to_vec(),
        rotations: normals.iter().map(|n| quat_align_z(&v3(*n))).collect(),
        scales: s0.iter().map(|&s| [s, s, s * flat_ratio]).collect(),
        colors: colors.to_vec(),
        opacities: vec![1.0; positions.len()],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subdivision: usize,
    pub preset: DeformPreset,
    pub frames: usize,
    pub magnitude: f64,
    pub rig: RigConfig,
    pub texture: TextureSpec,
    pub texture_resolution: usize,
    /// Ratio of the normal-axis scale to the tangential scale.
    pub flat_ratio: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subdivision: 3,
            preset: DeformPreset::Bump,
            frames: 10,
            magnitude: 0.15,
            rig: RigConfig::default(),
            texture: TextureSpec::default(),
            texture_resolution: 256,
            flat_ratio: 0.01,
        }
    }
}

/// Pipeline settings for the unit-radius synthetic sphere. The library
/// defaults suit dense face-scale meshes; at this scale and resolution the
/// length-dimensioned priors need lighter weights, and L_pos in particular is
/// far from zero at rest on a coarse curved mesh.
pub fn harness_pipeline_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.loss.lambda_rot = 0.5;
    c.loss.lambda_iso = 0.5;
    c.loss.lambda_pos = 0.01;
    c
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub topology: Arc<Topology>,
    pub frames: Vec<Vec<[f64; 3]>>,
    pub texture: Image,
    pub colors: Vec<[f64; 3]>,
    /// Tangential ground-truth scale per vertex.
    pub s0: Vec<f64>,
    pub cameras: Vec<Camera>,
    /// `images[frame][camera]`
    pub images: Vec<Vec<Image>>,
}

impl SyntheticSequence {
    pub fn gaussians(&self, frame: usize, flat_ratio: f64) -> GaussianSet {
        ground_truth_gaussians(
            &self.topology,
            &self.frames[frame],
            &self.colors,
            &self.s0,
            flat_ratio,
        )
    }
}

/// Builds the sphere, deforms it, textures it and renders every frame from
/// every camera with the optimizer's own forward model.
pub fn generate_sequence(config: &SynthConfig, settings: &RenderSettings) -> Result<SyntheticSequence> {
    let (topology, base, uv) = make_quad_sphere(config.subdivision)?;
    let frames = deform_sequence(&topology, &base, config.preset, config.frames, config.magnitude)?;
    let texture = config.texture.render(config.texture_resolution)?;
    let colors: Vec<[f64; 3]> = uv.iter().map(|&u| texture.sample_uv(u)).collect();
    let s0 = half_min_ring_distance(&topology, &base)?;
    let cameras = camera_rig(&config.rig, Vec3::zeros(), super::bounding_radius(&base))?;
    let images = frames
        .par_iter()
        .map(|f| {
            let g = ground_truth_gaussians(&topology, f, &colors, &s0, config.flat_ratio);
            cameras.iter().map(|c| render(&g, c, settings).rgb).collect()
        })
        .collect();
    Ok(SyntheticSequence {
        topology: Arc::new(topology),
        frames,
        texture,
        colors,
        s0,
        cameras,
        images,
    })
}

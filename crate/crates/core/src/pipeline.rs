//! Stage orchestration: first-frame initialization, per-frame geometry
//! tracking and per-frame texture optimization.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::densify::{refresh_dense_positions, DenseGaussianMesh};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::{
    geo_loss, init_loss, multiview_image_term, FrameView, GeoInputs, LossBreakdown, LossConfig,
    View,
};
use crate::math::{quat_align_z, v3};
use crate::mesh::{
    build_adjacency, default_lambda_w, initial_scales, mean_edge_length, signed_dihedral_angles,
    vertex_normals, Adjacency, Dihedral, GaussianMesh, GaussianSet, Topology,
};
use crate::optim::{AdamHyper, AttributeMask, GaussianAdam, LearningRates};
use crate::render::{camera_extent, Camera, RenderSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Init,
    Geometry,
    Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub iterations: usize,
    pub optimize: AttributeMask,
    pub lr: LearningRates,
    /// Every rate decays exponentially to this fraction by the last iteration.
    pub lr_final_ratio: f64,
    /// Target images and cameras are reduced by this integer factor.
    pub downscale: usize,
    /// Overrides the global Adam epsilon for this stage.
    #[serde(default)]
    pub adam_eps: Option<f64>,
}

impl StageConfig {
    fn hyper(&self, global: AdamHyper) -> AdamHyper {
        AdamHyper {
            eps: self.adam_eps.unwrap_or(global.eps),
            ..global
        }
    }
}

const DEFAULT_LR: LearningRates = LearningRates {
    positions: 1.6e-4,
    rotations: 1e-3,
    scales: 5e-3,
    colors: 2.5e-3,
    opacities: 0.0,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSchedule {
    pub init: StageConfig,
    pub geometry: StageConfig,
    pub texture: StageConfig,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self {
            init: StageConfig {
                iterations: 200,
                optimize: AttributeMask {
                    positions: false,
                    rotations: true,
                    scales: true,
                    colors: false,
                    opacities: false,
                },
                lr: DEFAULT_LR,
                lr_final_ratio: 1.0,
                downscale: 1,
                adam_eps: Some(1e-2),
            },
            geometry: StageConfig {
                iterations: 300,
                optimize: AttributeMask {
                    positions: true,
                    rotations: true,
                    scales: false,
                    colors: true,
                    opacities: false,
                },
                lr: DEFAULT_LR,
                lr_final_ratio: 1.0,
                downscale: 1,
                adam_eps: None,
            },
            texture: StageConfig {
                iterations: 150,
                optimize: AttributeMask {
                    positions: false,
                    rotations: false,
                    scales: false,
                    colors: true,
                    opacities: false,
                },
                lr: DEFAULT_LR,
                lr_final_ratio: 1.0,
                downscale: 1,
                adam_eps: None,
            },
        }
    }
}

impl StageSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("init", &self.init), ("geometry", &self.geometry), ("texture", &self.texture)] {
            if s.optimize.opacities {
                return Err(Error::Config(format!("{name}: opacity is never optimized")));
            }
            if s.downscale == 0 {
                return Err(Error::Config(format!("{name}: downscale must be ≥ 1")));
            }
            if !(s.lr_final_ratio > 0.0 && s.lr_final_ratio <= 1.0) {
                return Err(Error::Config(format!("{name}: lr_final_ratio must lie in (0, 1]")));
            }
            if s.adam_eps.is_some_and(|e| !(e > 0.0 && e.is_finite())) {
                return Err(Error::Config(format!("{name}: adam_eps must be positive")));
            }
            let lr = &s.lr;
            if [lr.positions, lr.rotations, lr.scales, lr.colors, lr.opacities]
                .iter()
                .any(|v| !(*v >= 0.0))
            {
                return Err(Error::Config(format!("{name}: learning rates must be ≥ 0")));
            }
        }
        if self.geometry.optimize.scales {
            return Err(Error::Config("geometry: scales stay frozen after the first frame".into()));
        }
        let t = &self.texture.optimize;
        if t.positions || t.scales || !t.colors {
            return Err(Error::Config(
                "texture: only colours (and optionally rotations) are optimized".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub loss: LossConfig,
    pub schedule: StageSchedule,
    pub render: RenderSettings,
    pub adam: AdamHyper,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.schedule.validate()
    }
}

/// Frame-0 quantities every later frame is regularized against.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameReference {
    pub positions: Vec<[f64; 3]>,
    pub angles: Vec<Dihedral>,
    pub scale_init: Vec<[f64; 3]>,
    pub adjacency: Adjacency,
    pub mean_edge: f64,
    /// Camera extent, or the frame-0 bounding radius when the cameras do not
    /// spread out. Position learning rates are in these units.
    pub scene_scale: f64,
}

impl FrameReference {
    pub fn new(
        topology: &Topology,
        positions: &[[f64; 3]],
        lambda_w: Option<f64>,
        cameras: &[Camera],
    ) -> Result<Self> {
        let lw = lambda_w.unwrap_or_else(|| default_lambda_w(topology, positions));
        let adjacency = build_adjacency(topology, positions, lw)?;
        let angles = signed_dihedral_angles(positions, &adjacency);
        let scale_init = initial_scales(topology, positions)?;
        let n = positions.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in positions {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        let radius = positions
            .iter()
            .map(|p| (v3(*p) - v3(c)).norm())
            .fold(0.0, f64::max);
        if !(radius > 0.0) {
            return Err(Error::DegenerateMesh("frame-0 mesh has zero extent".into()));
        }
        let extent = camera_extent(cameras);
        let scene_scale = if extent > 0.0 { extent } else { radius };
        Ok(Self {
            positions: positions.to_vec(),
            angles,
            scale_init,
            adjacency,
            mean_edge: mean_edge_length(topology, positions),
            scene_scale,
        })
    }

    /// Hash of every bit of the reference, for immutability checks.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.positions {
            p.iter().for_each(|v| h.write_u64(v.to_bits()));
        }
        for s in &self.scale_init {
            s.iter().for_each(|v| h.write_u64(v.to_bits()));
        }
        for a in &self.angles {
            h.write_u64(a.value().map(f64::to_bits).unwrap_or(u64::MAX));
        }
        self.adjacency.weights.iter().for_each(|w| h.write_u64(w.to_bits()));
        h.finish()
    }
}

/// Loss trace of one stage run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub frame: usize,
    pub stage: Stage,
    /// Total loss before each step and after the last one.
    pub losses: Vec<f64>,
    pub image: f64,
    pub phy: f64,
    pub topo: f64,
    pub scale: f64,
    pub skipped_edges: usize,
    pub skipped_vertices: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SequenceState {
    pub mesh: GaussianMesh,
    pub reference: Arc<FrameReference>,
    pub diagnostics: Vec<StageDiagnostics>,
}

impl SequenceState {
    pub fn frame_index(&self) -> usize {
        self.mesh.frame_index
    }

    pub fn scale_floor(&self) -> f64 {
        1e-7 * self.reference.scene_scale
    }
}

/// Gaussians before any optimization: vertex positions, +z aligned with the
/// vertex normal, isotropic half-shortest-edge scales, opacity 1 and colours
/// sampled from `texture` at the vertex UVs.
pub fn initial_gaussians(
    topology: &Topology,
    positions: &[[f64; 3]],
    texture: &Image,
) -> Result<GaussianSet> {
    if positions.len() != topology.n_v() {
        return Err(Error::ShapeMismatch(format!(
            "{} positions for {} vertices",
            positions.len(),
            topology.n_v()
        )));
    }
    let scales = initial_scales(topology, positions)?;
    let normals = vertex_normals(topology, positions, None);
    Ok(GaussianSet {
        positions: positions.to_vec(),
        rotations: normals.iter().map(|n| quat_align_z(&v3(*n))).collect(),
        scales,
        colors: topology.uv().iter().map(|&uv| texture.sample_uv(uv)).collect(),
        opacities: vec![1.0; positions.len()],
    })
}

fn scaled_views(views: &[View], factor: usize) -> Vec<View> {
    views.iter().map(|v| v.downscaled(factor)).collect()
}

/// Runs one stage's Adam loop on `g`, returning the loss trace and the final
/// breakdown.
fn run_stage<F>(
    g: &mut GaussianSet,
    stage: &StageConfig,
    hyper: AdamHyper,
    scene_scale: f64,
    scale_floor: f64,
    frame: usize,
    mut eval: F,
) -> Result<(Vec<f64>, LossBreakdown)>
where
    F: FnMut(&GaussianSet) -> Result<LossBreakdown>,
{
    let mut adam = GaussianAdam::new(stage.hyper(hyper));
    let mut losses = Vec::with_capacity(stage.iterations + 1);
    let iters = stage.iterations;
    for it in 0..iters {
        let b = eval(g)?;
        if !b.is_finite() {
            return Err(Error::NonFiniteLoss {
                frame,
                iteration: it,
            });
        }
        losses.push(b.total);
        let factor = if iters > 1 {
            stage.lr_final_ratio.powf(it as f64 / (iters - 1) as f64)
        } else {
            1.0
        };
        adam.step(g, &b.grads, &stage.optimize, &stage.lr, scene_scale, factor, scale_floor)?;
    }
    let b = eval(g)?;
    if !b.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            frame,
            iteration: iters,
        });
    }
    losses.push(b.total);
    Ok((losses, b))
}

fn diagnostics(frame: usize, stage: Stage, losses: Vec<f64>, b: &LossBreakdown, t0: Instant) -> StageDiagnostics {
    StageDiagnostics {
        frame,
        stage,
        losses,
        image: b.image,
        phy: b.phy,
        topo: b.topo,
        scale: b.scale,
        skipped_edges: b.skipped_edges,
        skipped_vertices: b.skipped_vertices,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// Binds Gaussians to the registered first-frame mesh and optimizes rotations
/// and scales against `L_init`.
pub fn init_first_frame(
    topology: Arc<Topology>,
    positions: &[[f64; 3]],
    texture: &Image,
    views: &[View],
    config: &PipelineConfig,
) -> Result<SequenceState> {
    config.validate()?;
    let t0 = Instant::now();
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    let reference = FrameReference::new(&topology, positions, config.loss.lambda_w, &cameras)?;
    let mut g = initial_gaussians(&topology, positions, texture)?;
    let stage = &config.schedule.init;
    let views = scaled_views(views, stage.downscale);
    let floor = 1e-7 * reference.scene_scale;
    let (losses, b) = run_stage(
        &mut g,
        stage,
        config.adam,
        reference.scene_scale,
        floor,
        0,
        |g| init_loss(g, &reference.scale_init, &views, &config.render, &config.loss),
    )?;
    let mesh = GaussianMesh::new(g, topology, 0)?;
    Ok(SequenceState {
        mesh,
        reference: Arc::new(reference),
        diagnostics: vec![diagnostics(0, Stage::Init, losses, &b, t0)],
    })
}

/// Optimizes frame `t = state.frame_index() + 1` starting from frame `t - 1`
/// under `L_geo`. On error the state is left at `t - 1`.
pub fn track_frame<'a>(
    state: &'a mut SequenceState,
    views: &[View],
    config: &PipelineConfig,
) -> Result<&'a GaussianMesh> {
    config.validate()?;
    let t0 = Instant::now();
    let frame = state.frame_index() + 1;
    let stage = &config.schedule.geometry;
    let views = scaled_views(views, stage.downscale);
    let reference = state.reference.clone();
    let prev = state.mesh.gaussians.clone();
    let mut g = prev.clone();
    let (losses, b) = run_stage(
        &mut g,
        stage,
        config.adam,
        reference.scene_scale,
        state.scale_floor(),
        frame,
        |g| {
            let inputs = GeoInputs {
                gaussians: g,
                previous: FrameView {
                    positions: &prev.positions,
                    rotations: &prev.rotations,
                },
                frame0_positions: &reference.positions,
                frame0_angles: &reference.angles,
                adjacency: &reference.adjacency,
                views: &views,
                render: &config.render,
            };
            geo_loss(&inputs, &config.loss)
        },
    )?;
    state.mesh = GaussianMesh::new(g, state.mesh.topology.clone(), frame)?;
    state
        .diagnostics
        .push(diagnostics(frame, Stage::Geometry, losses, &b, t0));
    Ok(&state.mesh)
}

/// Refreshes the dense lattice from the current base mesh and optimizes its
/// colours (and rotations when the schedule releases them) under `L_image`.
/// Colours carry over from the previous call as a warm start.
pub fn optimize_texture_frame(
    state: &SequenceState,
    dense: &mut DenseGaussianMesh,
    views: &[View],
    config: &PipelineConfig,
) -> Result<StageDiagnostics> {
    config.validate()?;
    let t0 = Instant::now();
    refresh_dense_positions(dense, &state.mesh)?;
    let stage = &config.schedule.texture;
    let views = scaled_views(views, stage.downscale);
    let (losses, b) = run_stage(
        &mut dense.gaussians,
        stage,
        config.adam,
        state.reference.scene_scale,
        state.scale_floor(),
        state.frame_index(),
        |g| {
            let (image, grads) = multiview_image_term(g, &views, &config.render, &config.loss)?;
            Ok(LossBreakdown {
                image,
                total: image,
                grads,
                ..Default::default()
            })
        },
    )?;
    Ok(diagnostics(state.frame_index(), Stage::Texture, losses, &b, t0))
}

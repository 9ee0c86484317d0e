use std::sync::Arc;

use topomesh::densify::densify_uv;
use topomesh::loss::{init_loss, multiview_image_term, View};
use topomesh::math::v3;
use topomesh::mesh::{initial_scales, mean_edge_length};
use topomesh::pipeline::*;
use topomesh::render::{render, Camera, RenderSettings};
use topomesh::synth::*;
use topomesh::Error;

fn small_synth(preset: DeformPreset, magnitude: f64, frames: usize) -> SyntheticSequence {
    let cfg = SynthConfig {
        subdivision: 2,
        preset,
        frames,
        magnitude,
        rig: RigConfig {
            cameras: 4,
            width: 48,
            height: 48,
            ..Default::default()
        },
        texture_resolution: 128,
        ..Default::default()
    };
    generate_sequence(&cfg, &RenderSettings::default()).unwrap()
}

fn views(seq: &SyntheticSequence, frame: usize) -> Vec<View> {
    seq.cameras
        .iter()
        .zip(&seq.images[frame])
        .map(|(c, i)| View::new(c.clone(), i.clone()))
        .collect()
}

fn mean_error(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (v3(*p) - v3(*q)).norm()).sum::<f64>() / a.len() as f64
}

fn fast_config(iters: usize) -> PipelineConfig {
    let mut c = harness_pipeline_config();
    c.schedule.init.iterations = 150;
    c.schedule.geometry.iterations = iters;
    c
}

fn run_tracking(seq: &SyntheticSequence, config: &PipelineConfig) -> (SequenceState, Vec<Vec<[f64; 3]>>) {
    let mut st = init_first_frame(
        seq.topology.clone(),
        &seq.frames[0],
        &seq.texture,
        &views(seq, 0),
        config,
    )
    .unwrap();
    let mut out = vec![st.mesh.gaussians.positions.clone()];
    for f in 1..seq.frames.len() {
        track_frame(&mut st, &views(seq, f), config).unwrap();
        out.push(st.mesh.gaussians.positions.clone());
    }
    (st, out)
}

#[test]
fn flat_grid_init_is_a_fixed_point() {
    let (topo, pos) = make_grid(4, 4, 0.5);
    let topo = Arc::new(topo);
    let pos: Vec<[f64; 3]> = pos.iter().map(|p| [p[0] - 1.0, p[1] - 1.0, 0.0]).collect();
    let tex = TextureSpec {
        kind: TextureKind::Checker,
        ..Default::default()
    }
    .render(64)
    .unwrap();
    let cam = Camera::look_at(v3([0.0, 0.0, 4.0]), v3([0.0; 3]), v3([0.0, 1.0, 0.0]), 0.9, 32, 32).unwrap();
    let g0 = initial_gaussians(&topo, &pos, &tex).unwrap();
    let settings = RenderSettings::default();
    let target = render(&g0, &cam, &settings).rgb;
    let v = vec![View::new(cam, target)];
    let mut config = PipelineConfig::default();
    config.loss.lambda_scale = 0.0;
    config.schedule.init.iterations = 60;
    let before = init_loss(&g0, &initial_scales(&topo, &pos).unwrap(), &v, &settings, &config.loss).unwrap();
    let st = init_first_frame(topo, &pos, &tex, &v, &config).unwrap();
    let after = st.diagnostics[0].losses.last().copied().unwrap();
    assert!(before.total < 1e-12);
    assert!((after - before.total).abs() <= 0.01 * before.total.max(1e-6), "{after}");
    assert_eq!(st.mesh.gaussians.positions, pos);
}

#[test]
fn init_freezes_position_color_opacity_and_flattens() {
    let seq = small_synth(DeformPreset::Bump, 0.0, 1);
    let config = fast_config(0);
    let g0 = initial_gaussians(&seq.topology, &seq.frames[0], &seq.texture).unwrap();
    let st = init_first_frame(seq.topology.clone(), &seq.frames[0], &seq.texture, &views(&seq, 0), &config).unwrap();
    let g = &st.mesh.gaussians;
    assert_eq!(g.positions, g0.positions);
    assert_eq!(g.colors, g0.colors);
    assert_eq!(g.opacities, g0.opacities);
    for (s, s0) in g.scales.iter().zip(&st.reference.scale_init) {
        let min = s[0].min(s[1]).min(s[2]);
        assert!(min < 0.1 * s0[0]);
        assert!(s.iter().all(|&v| v <= 1.5 * s0[0] + 1e-12));
    }
    for q in &g.rotations {
        let n: f64 = q.iter().map(|v| v * v).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn null_motion_barely_drifts() {
    let seq = small_synth(DeformPreset::Bump, 0.0, 2);
    let (st, tracked) = run_tracking(&seq, &fast_config(300));
    let edge = mean_edge_length(&seq.topology, &seq.frames[0]);
    let drift = mean_error(&tracked[1], &seq.frames[0]) / edge;
    assert!(drift < 1e-3, "drift {drift}");
    assert_eq!(st.frame_index(), 1);
}

#[test]
fn rigid_rotation_is_tracked() {
    let seq = small_synth(DeformPreset::RigidRotation, 2.0, 3);
    let (_, tracked) = run_tracking(&seq, &fast_config(300));
    let edge = mean_edge_length(&seq.topology, &seq.frames[0]);
    for f in 1..3 {
        let e = mean_error(&tracked[f], &seq.frames[f]) / edge;
        assert!(e < 0.02, "frame {f}: {e}");
    }
}

#[test]
fn tracking_keeps_frozen_state_and_reference() {
    let seq = small_synth(DeformPreset::Bump, 0.2, 3);
    let config = fast_config(40);
    let mut st = init_first_frame(seq.topology.clone(), &seq.frames[0], &seq.texture, &views(&seq, 0), &config).unwrap();
    let sum = st.reference.checksum();
    let before = st.mesh.gaussians.clone();
    for f in 1..3 {
        track_frame(&mut st, &views(&seq, f), &config).unwrap();
    }
    assert_eq!(st.reference.checksum(), sum);
    assert_eq!(st.mesh.gaussians.scales, before.scales);
    assert_eq!(st.mesh.gaussians.opacities, before.opacities);
    assert_ne!(st.mesh.gaussians.positions, before.positions);
    assert_eq!(st.diagnostics.len(), 3);
    assert_eq!(st.diagnostics[2].stage, Stage::Geometry);
}

#[test]
fn non_finite_target_aborts_without_touching_state() {
    let seq = small_synth(DeformPreset::Bump, 0.1, 2);
    let config = fast_config(5);
    let mut st = init_first_frame(seq.topology.clone(), &seq.frames[0], &seq.texture, &views(&seq, 0), &config).unwrap();
    let before = st.mesh.clone();
    let mut v = views(&seq, 1);
    v[0].target.data[0] = f64::NAN;
    let err = track_frame(&mut st, &v, &config).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { frame: 1, .. }), "{err}");
    assert_eq!(st.mesh, before);
    assert_eq!(st.frame_index(), 0);
}

#[test]
fn texture_stage_identity_and_fixed_point() {
    let seq = small_synth(DeformPreset::Bump, 0.1, 2);
    let mut config = fast_config(20);
    let mut st = init_first_frame(seq.topology.clone(), &seq.frames[0], &seq.texture, &views(&seq, 0), &config).unwrap();
    track_frame(&mut st, &views(&seq, 1), &config).unwrap();
    let mut dense = densify_uv(&st.mesh, 3).unwrap();
    let colors = dense.gaussians.colors.clone();
    let base = st.mesh.gaussians.clone();

    config.schedule.texture.iterations = 0;
    optimize_texture_frame(&st, &mut dense, &views(&seq, 1), &config).unwrap();
    assert_eq!(dense.gaussians.colors, colors);

    // targets rendered from the dense mesh itself
    let settings = config.render;
    let targets: Vec<View> = seq
        .cameras
        .iter()
        .map(|c| View::new(c.clone(), render(&dense.gaussians, c, &settings).rgb))
        .collect();
    let scales = dense.gaussians.scales.clone();
    let positions = dense.gaussians.positions.clone();
    config.schedule.texture.iterations = 50;
    let d = optimize_texture_frame(&st, &mut dense, &targets, &config).unwrap();
    let (final_loss, _) = multiview_image_term(&dense.gaussians, &targets, &settings, &config.loss).unwrap();
    assert_eq!(*d.losses.last().unwrap(), final_loss);
    assert!(final_loss < 1e-4, "{final_loss}");

    // and recovered from perturbed colours
    for c in &mut dense.gaussians.colors {
        c[0] = (c[0] + 0.05).min(1.0);
    }
    config.schedule.texture = StageSchedule::default().texture;
    let d = optimize_texture_frame(&st, &mut dense, &targets, &config).unwrap();
    let last = *d.losses.last().unwrap();
    assert!(last < 0.05 * d.losses[0], "{} -> {last}", d.losses[0]);
    assert_eq!(dense.gaussians.scales, scales);
    assert_eq!(dense.gaussians.positions, positions);
    assert_eq!(st.mesh.gaussians, base);
}

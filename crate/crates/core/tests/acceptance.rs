//! Acceptance criteria A1-A9. Runs without the libtest harness so every
//! criterion prints one line whether it passes or not; exits non-zero if any
//! fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Matrix2, Matrix3, Quaternion, RowVector2, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topomesh::densify::{bilinear_sample, densify_uv};
use topomesh::extract::{bake_texture, ellipsoid_offset, normal_expansion};
use topomesh::image::psnr;
use topomesh::io::RunManifest;
use topomesh::loss::{flat_loss, iso_loss, rigid_loss, rot_loss, FrameView, View};
use topomesh::math::{quat_from_axis_angle, quat_mul, quat_normalize, v3, Quat};
use topomesh::mesh::{build_adjacency, default_lambda_w, signed_dihedral_angles, GaussianMesh};
use topomesh::pipeline::{init_first_frame, initial_gaussians};
use topomesh::render::{render, RenderSettings};
use topomesh::synth::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = fn() -> Outcome;

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, Criterion); 8] = [
        ("A1", "gradient suite", a1_gradients),
        ("A2", "oracle equivalence", a2_oracle),
        ("A3+A9", "synthetic tracking, determinism", a3_a9_tracking),
        ("A4", "rigid invariance", a4_rigid_invariance),
        ("A5", "densification algebra", a5_densify),
        ("A6", "normal expansion", a6_normal_expansion),
        ("A7", "texture round trip", a7_texture_round_trip),
        ("A8", "scale flattening", a8_scale_flattening),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| outcome(false, "panicked"));
        let secs = t.elapsed().as_secs_f64();
        // A3 and A9 share their first run and report on separate lines
        for line in result.detail.lines() {
            let (tag, rest) = line.split_once(' ').unwrap_or((id, line));
            let (ok, rest) = match (rest.strip_prefix("ok: "), rest.strip_prefix("FAIL: ")) {
                (Some(r), _) => (true, r),
                (_, Some(r)) => (false, r),
                _ => (result.pass, rest),
            };
            println!("{tag} {} {name}: {rest} [{secs:.1} s]", if ok { "PASS" } else { "FAIL" });
        }
        if !result.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance group(s) failed");
        std::process::exit(1);
    }
}

fn a1_gradients() -> Outcome {
    let t = Instant::now();
    let rows = match run_gradcheck(1) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("A1 error {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.max_error).fold(0.0, f64::max);
    let failing: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    let pass = failing.is_empty() && secs < 120.0;
    outcome(
        pass,
        format!(
            "A1 {} rows, worst rel err {worst:.2e} (< {GRADCHECK_TOLERANCE:e}), failing {failing:?}, {secs:.1} s (< 120 s)",
            rows.len()
        ),
    )
}

fn a2_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let settings = RenderSettings::oracle();
    let cam = small_camera(8).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let g = random_scene(&mut rng, 10);
        let img = render(&g, &cam, &settings).rgb;
        for y in 0..8 {
            for x in 0..8 {
                let want = brute_force_composite(&g, &cam, x, y, settings.background);
                let got = img.pixel(x, y);
                for c in 0..3 {
                    worst = worst.max((want[c] - got[c]).abs());
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < 1e-6 && secs < 30.0,
        format!("A2 50 scenes, max pixel diff {worst:.2e} (< 1e-6), {secs:.1} s (< 30 s)"),
    )
}

fn topomesh_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_topomesh"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

const PIPELINE: [&str; 7] = ["synth", "init", "track", "texture", "extract-mesh", "bake-texture", "report"];

/// Runs the bump configuration end to end in `dir`.
fn bump_run(dir: &Path) -> Result<(), String> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_bump.json");
    let (seq, work) = (dir.join("sequence"), dir.join("work"));
    for cmd in PIPELINE {
        topomesh_cli(&[
            cmd,
            "--config",
            config.to_str().unwrap(),
            "--sequence",
            seq.to_str().unwrap(),
            "--work",
            work.to_str().unwrap(),
        ])?;
    }
    Ok(())
}

/// Contents of every mesh, checkpoint and texture a run produced.
fn run_outputs(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let work = dir.join("work");
    let manifest = RunManifest::load_or_default(&work).unwrap();
    let mut out = BTreeMap::new();
    for (cmd, files) in &manifest.commands {
        if cmd == "synth" || cmd == "report" {
            continue;
        }
        for f in files.iter().filter(|f| !f.starts_with("diagnostics")) {
            out.insert(f.clone(), fs::read(work.join(f)).unwrap());
        }
    }
    out
}

fn a3_a9_tracking() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let (first, second) = (root.path().join("a"), root.path().join("b"));
    let t = Instant::now();
    if let Err(e) = bump_run(&first) {
        return outcome(false, format!("A3 FAIL: run failed: {e}\nA9 FAIL: not run"));
    }
    let secs = t.elapsed().as_secs_f64();
    let text = fs::read_to_string(first.join("work/report.json")).unwrap();
    let report: TrackingReport = serde_json::from_str(&text).unwrap();
    let worst_mean = report.frames.iter().map(|f| f.mean).fold(0.0, f64::max);
    let worst_ratio = report
        .frames
        .iter()
        .filter(|f| f.gt_adjacent_rmse > 0.0)
        .map(|f| f.adjacent_rmse / f.gt_adjacent_rmse)
        .fold(0.0, f64::max);
    let a3 = report.frames.len() == 10 && worst_mean < 0.05 && worst_ratio <= 3.0;
    let a3_line = format!(
        "A3 {}: {} frames, worst mean vertex error {:.4} edges (< 0.05), worst adjacent RMSE ratio {worst_ratio:.3} (<= 3), {secs:.0} s",
        if a3 { "ok" } else { "FAIL" },
        report.frames.len(),
        worst_mean
    );

    if let Err(e) = bump_run(&second) {
        return outcome(false, format!("{a3_line}\nA9 FAIL: second run failed: {e}"));
    }
    let (a, b) = (run_outputs(&first), run_outputs(&second));
    let differing: Vec<_> = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.display().to_string()).collect();
    let has = |dir: &str| a.keys().any(|k| k.starts_with(dir));
    let a9 = differing.is_empty() && a.len() == b.len() && has("meshes") && has("textures");
    let a9_line = format!(
        "A9 {}: {} output files compared, {} differ {:?}",
        if a9 { "ok" } else { "FAIL" },
        a.len(),
        differing.len(),
        &differing[..differing.len().min(3)]
    );
    outcome(a3 && a9, format!("{a3_line}\n{a9_line}"))
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    quat_normalize(&[
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ])
}

fn a4_rigid_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (topo, sphere, _) = make_quad_sphere(4).unwrap();
    let p0: Vec<[f64; 3]> = sphere
        .iter()
        .map(|p| p.map(|x| x + rng.gen_range(-0.02..0.02)))
        .collect();
    let q0: Vec<Quat> = (0..p0.len()).map(|_| random_quat(&mut rng)).collect();
    let adj = build_adjacency(&topo, &p0, default_lambda_w(&topo, &p0)).unwrap();
    let angles0 = signed_dihedral_angles(&p0, &adj);
    let mut worst = [0.0f64; 4];
    for _ in 0..20 {
        let axis = v3(random_unit(&mut rng));
        let r = quat_from_axis_angle(&axis, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        let rot = UnitQuaternion::from_quaternion(Quaternion::new(r[0], r[1], r[2], r[3]));
        let t = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let p1: Vec<[f64; 3]> = p0
            .iter()
            .map(|p| {
                let v = rot * Vector3::from(*p) + t;
                [v.x, v.y, v.z]
            })
            .collect();
        let q1: Vec<Quat> = q0.iter().map(|q| quat_mul(&r, q)).collect();
        let prev = FrameView { positions: &p0, rotations: &q0 };
        let cur = FrameView { positions: &p1, rotations: &q1 };
        let values = [
            rigid_loss(prev, cur, &adj).value,
            rot_loss(prev, cur, &adj).value,
            iso_loss(&p0, &p1, &adj).value,
            flat_loss(&p1, &angles0, &adj).value,
        ];
        for (w, v) in worst.iter_mut().zip(values) {
            *w = w.max(v.abs());
        }
    }
    let pass = worst.iter().all(|&w| w < 1e-6);
    outcome(
        pass,
        format!(
            "A4 20 motions, max rigid {:.1e} rot {:.1e} iso {:.1e} flat {:.1e} (< 1e-6)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn base_mesh(topo: topomesh::mesh::Topology, pos: &[[f64; 3]], rng: &mut ChaCha8Rng) -> GaussianMesh {
    let topo = Arc::new(topo);
    let tex = TextureSpec::default().render(64).unwrap();
    let mut g = initial_gaussians(&topo, pos, &tex).unwrap();
    for q in &mut g.rotations {
        *q = random_quat(rng);
    }
    for s in &mut g.scales {
        *s = s.map(|x| x * rng.gen_range(0.5..1.5));
    }
    GaussianMesh::new(g, topo, 0).unwrap()
}

fn a5_densify() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=64usize);
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let m = (n - 1) as f64;
        let left = RowVector2::new(m - i as f64, i as f64);
        let corners = Matrix2::new(c[0], c[1], c[2], c[3]);
        let right = Vector2::new(m - j as f64, j as f64);
        let want = (left * corners * right)[0] / (m * m);
        worst = worst.max((bilinear_sample(c, i, j, n).unwrap() - want).abs());
    }

    let (topo, pos, _) = make_quad_sphere(2).unwrap();
    let base = base_mesh(topo, &pos, &mut rng);
    let dense = densify_uv(&base, 2).unwrap();
    // scales and opacities are reset on the dense lattice by definition
    let identity = dense.gaussians.positions == base.gaussians.positions
        && dense.gaussians.colors == base.gaussians.colors
        && dense.topology.uv() == base.topology.uv()
        && dense.topology.faces() == base.topology.faces();

    let (topo, pos) = make_grid(2, 1, 1.0);
    let two = base_mesh(topo, &pos, &mut rng);
    let count = densify_uv(&two, 3).unwrap().len();

    let pass = worst <= 1e-12 && identity && count == 15;
    outcome(
        pass,
        format!("A5 1000 tuples, max diff {worst:.1e} (<= 1e-12), N=2 identity {identity}, two-quad N=3 count {count} (15)"),
    )
}

/// Distance along `n` to the 1σ surface of `(q, s)`, by bisection on the
/// Mahalanobis norm of the covariance built with nalgebra.
fn bisection_offset(q: &Quat, s: &[f64; 3], n: &[f64; 3]) -> f64 {
    let r = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])).to_rotation_matrix();
    let cov = r.matrix() * Matrix3::from_diagonal(&Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2])) * r.matrix().transpose();
    let inv = cov.try_inverse().unwrap();
    let dir = Vector3::from(*n);
    let inside = |t: f64| (dir * t).dot(&(inv * (dir * t))) < 1.0;
    let (mut lo, mut hi) = (0.0, 2.0 * s.iter().copied().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn a6_normal_expansion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let q = random_quat(&mut rng);
        let s: [f64; 3] = std::array::from_fn(|_| 10f64.powf(rng.gen_range(-2.0..0.0)));
        let n = random_unit(&mut rng);
        worst = worst.max((ellipsoid_offset(&q, &s, &n) - bisection_offset(&q, &s, &n)).abs());
    }
    let r = 0.37;
    let g = topomesh::mesh::GaussianSet {
        positions: vec![[0.1, -0.2, 0.3]],
        rotations: vec![random_quat(&mut rng)],
        scales: vec![[r; 3]],
        colors: vec![[0.5; 3]],
        opacities: vec![1.0],
    };
    let n = random_unit(&mut rng);
    let (p, _) = normal_expansion(&g, &[n]).unwrap();
    let moved = (v3(p[0]) - v3(g.positions[0])).norm();
    let iso = (moved - r).abs();
    outcome(
        worst < 1e-6 && iso < 1e-12,
        format!("A6 1000 triples, max diff {worst:.1e} (< 1e-6), isotropic offset error {iso:.1e}"),
    )
}

fn a7_texture_round_trip() -> Outcome {
    let (topo, pos, _) = make_quad_sphere(48).unwrap();
    let topo = Arc::new(topo);
    let spec = TextureSpec {
        kind: TextureKind::Checker,
        ..Default::default()
    };
    let source = spec.render(512).unwrap();
    let g = initial_gaussians(&topo, &pos, &source).unwrap();
    let base = GaussianMesh::new(g, topo, 0).unwrap();
    let dense = densify_uv(&base, 8).unwrap();
    let map = bake_texture(&dense, 512).unwrap();
    let db = psnr(&map.rgb, &source, Some(&map.coverage)).unwrap();
    outcome(
        db > 35.0,
        format!("A7 PSNR {db:.2} dB (> 35) over {:.1}% covered texels", 100.0 * map.covered_fraction()),
    )
}

fn a8_scale_flattening() -> Outcome {
    let cfg = SynthConfig {
        frames: 1,
        ..Default::default()
    };
    let seq = generate_sequence(&cfg, &RenderSettings::default()).unwrap();
    let views: Vec<View> = seq
        .cameras
        .iter()
        .zip(&seq.images[0])
        .map(|(c, i)| View::new(c.clone(), i.clone()))
        .collect();
    let config = harness_pipeline_config();
    let st = init_first_frame(seq.topology.clone(), &seq.frames[0], &seq.texture, &views, &config).unwrap();
    let mut worst_min = 0.0f64;
    let mut worst_max = 0.0f64;
    for (s, s0) in st.mesh.gaussians.scales.iter().zip(&st.reference.scale_init) {
        worst_min = worst_min.max(s[0].min(s[1]).min(s[2]) / s0[0]);
        worst_max = worst_max.max(s[0].max(s[1]).max(s[2]) / s0[0]);
    }
    let pass = config.schedule.init.iterations == 200 && worst_min < 0.1 && worst_max <= 1.5;
    outcome(
        pass,
        format!(
            "A8 {} iterations, worst min-scale ratio {worst_min:.4} (< 0.1), worst max-scale ratio {worst_max:.4} (<= 1.5)",
            config.schedule.init.iterations
        ),
    )
}

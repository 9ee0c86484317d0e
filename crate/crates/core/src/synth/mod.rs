//! Synthetic ground truth: meshes, deformations, textures, camera rigs and the
//! independent oracles the tests compare against.

mod gradcheck;
mod metrics;
mod oracle;
mod scene;
mod texture;

pub use gradcheck::{
    max_relative_error, random_scene, run_gradcheck, small_camera, GradcheckRow, PatchFixture,
    GRADCHECK_TOLERANCE,
};
pub use metrics::{adjacent_rmse, tracking_error, FrameError, TrackingReport};
pub use oracle::{brute_force_composite, finite_diff_gradient};
pub use scene::{
    camera_rig, generate_sequence, ground_truth_gaussians, half_min_ring_distance,
    harness_pipeline_config, RigConfig,
    SynthConfig, SyntheticSequence,
};
pub use texture::{TextureKind, TextureSpec};

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{quat_from_axis_angle, quat_to_matrix, v3, Vec3};
use crate::mesh::{vertex_normals, Topology};

/// Planar `nx × ny` quad grid in the z = 0 plane, counter-clockwise seen from
/// +z. Vertex `(i, j)` has index `j * (nx + 1) + i`.
pub fn make_grid(nx: usize, ny: usize, spacing: f64) -> (Topology, Vec<[f64; 3]>) {
    assert!(nx >= 1 && ny >= 1, "grid needs at least one quad");
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut pos = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut uv = Vec::with_capacity(pos.capacity());
    for j in 0..=ny {
        for i in 0..=nx {
            pos.push([i as f64 * spacing, j as f64 * spacing, 0.0]);
            uv.push([i as f64 / nx as f64, j as f64 / ny as f64]);
        }
    }
    let mut faces = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let topo = Topology::new(faces, uv).expect("grid topology is valid by construction");
    (topo, pos)
}

// Proper rotations taking the +z cube face to each of the six faces, acting on
// integer lattice coordinates.
const CUBE_FACES: [fn([i64; 3]) -> [i64; 3]; 6] = [
    |[x, y, z]| [x, y, z],
    |[x, y, z]| [x, -y, -z],
    |[x, y, z]| [z, y, -x],
    |[x, y, z]| [-z, y, x],
    |[x, y, z]| [x, z, -y],
    |[x, y, z]| [x, -z, y],
];

/// Unit quad sphere: each cube face split into `s × s` equal-angle quads,
/// lattice points pushed onto the sphere. Faces are grouped per cube face in blocks of `s²`.
///
/// UVs are the orthographic fold `((x+1)/2, (y+1)/2)`: one UV per vertex with
/// no seams, the two z hemispheres sharing the unit disk.
#[allow(clippy::type_complexity)]
pub fn make_quad_sphere(s: usize) -> Result<(Topology, Vec<[f64; 3]>, Vec<[f64; 2]>)> {
    if s == 0 {
        return Err(Error::InvalidArgument("sphere subdivision must be ≥ 1".into()));
    }
    let si = s as i64;
    let mut index: BTreeMap<[i64; 3], usize> = BTreeMap::new();
    let mut lattice: Vec<[i64; 3]> = Vec::new();
    let mut faces = Vec::with_capacity(6 * s * s);
    for rot in CUBE_FACES {
        let mut site = |a: i64, b: i64| -> usize {
            let p = rot([2 * a - si, 2 * b - si, si]);
            *index.entry(p).or_insert_with(|| {
                lattice.push(p);
                lattice.len() - 1
            })
        };
        for b in 0..si {
            for a in 0..si {
                faces.push([site(a, b), site(a + 1, b), site(a + 1, b + 1), site(a, b + 1)]);
            }
        }
    }
    // equal-angle warp keeps quads of similar size across each cube face
    let warp = |k: i64| -> f64 {
        let t = if k.abs() == si {
            1.0
        } else {
            (std::f64::consts::FRAC_PI_4 * k.abs() as f64 / s as f64).tan()
        };
        t.copysign(k as f64)
    };
    let pos: Vec<[f64; 3]> = lattice
        .iter()
        .map(|p| {
            let v = [warp(p[0]), warp(p[1]), warp(p[2])];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        })
        .collect();
    let uv: Vec<[f64; 2]> = pos
        .iter()
        .map(|p| {
            [
                (0.5 * (p[0] + 1.0)).clamp(0.0, 1.0),
                (0.5 * (p[1] + 1.0)).clamp(0.0, 1.0),
            ]
        })
        .collect();
    let topo = Topology::new(faces, uv.clone())?;
    Ok((topo, pos, uv))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeformPreset {
    /// Rotation about the vertical (y) axis through the centroid;
    /// magnitude in degrees per frame, |m| ≤ 10.
    RigidRotation,
    /// Geodesic patch pushed along its frame-0 normals; magnitude is the peak
    /// displacement as a fraction of the bounding radius, 0 ≤ m ≤ 0.3.
    Bump,
    /// x axis scaled about the centroid up to `1 + m` at the last frame,
    /// |m| ≤ 0.5.
    Stretch,
}

impl DeformPreset {
    pub fn magnitude_range(self) -> (f64, f64) {
        match self {
            DeformPreset::RigidRotation => (-10.0, 10.0),
            DeformPreset::Bump => (0.0, 0.3),
            DeformPreset::Stretch => (-0.5, 0.5),
        }
    }
}

/// Patch radius of the bump preset as a fraction of the bounding radius.
pub const BUMP_RADIUS: f64 = 1.0;

fn centroid(p: &[[f64; 3]]) -> Vec3 {
    p.iter().fold(Vec3::zeros(), |a, q| a + v3(*q)) / p.len().max(1) as f64
}

pub fn bounding_radius(p: &[[f64; 3]]) -> f64 {
    let c = centroid(p);
    p.iter().map(|q| (v3(*q) - c).norm()).fold(0.0, f64::max)
}

/// Shortest edge-path distances from `source` (Dijkstra over mesh edges).
pub fn edge_path_distances(topology: &Topology, positions: &[[f64; 3]], source: usize) -> Vec<f64> {
    let n = topology.n_v();
    let mut nbrs = vec![Vec::new(); n];
    for f in topology.faces() {
        for k in 0..4 {
            let (a, b) = (f[k], f[(k + 1) % 4]);
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
    }
    let mut dist = vec![f64::INFINITY; n];
    dist[source] = 0.0;
    // distances are non-negative, so their bit patterns order like the values
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0u64, source)));
    while let Some(Reverse((bits, v))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[v] {
            continue;
        }
        for &u in &nbrs[v] {
            let nd = d + (v3(positions[u]) - v3(positions[v])).norm();
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(Reverse((nd.to_bits(), u)));
            }
        }
    }
    dist
}

/// Vertex used as the bump centre: the one furthest along (1, 1, 1) from the
/// centroid, lowest index on ties.
pub fn bump_center(positions: &[[f64; 3]]) -> usize {
    let c = centroid(positions);
    let d = Vec3::new(1.0, 1.0, 1.0).normalize();
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, p) in positions.iter().enumerate() {
        let s = (v3(*p) - c).dot(&d);
        if s > best.0 {
            best = (s, i);
        }
    }
    best.1
}

/// Ground-truth vertex positions for `frames` frames; frame 0 is `base`.
pub fn deform_sequence(
    topology: &Topology,
    base: &[[f64; 3]],
    preset: DeformPreset,
    frames: usize,
    magnitude: f64,
) -> Result<Vec<Vec<[f64; 3]>>> {
    let (lo, hi) = preset.magnitude_range();
    if !(magnitude >= lo && magnitude <= hi) {
        return Err(Error::InvalidArgument(format!(
            "{preset:?} magnitude {magnitude} outside the safe range [{lo}, {hi}]"
        )));
    }
    if frames == 0 {
        return Err(Error::InvalidArgument("frame count must be ≥ 1".into()));
    }
    if base.len() != topology.n_v() {
        return Err(Error::ShapeMismatch(format!(
            "{} positions for {} vertices",
            base.len(),
            topology.n_v()
        )));
    }
    let c = centroid(base);
    let ramp = |t: usize| {
        if frames > 1 {
            t as f64 / (frames - 1) as f64
        } else {
            0.0
        }
    };
    let mut out = Vec::with_capacity(frames);
    match preset {
        DeformPreset::RigidRotation => {
            for t in 0..frames {
                let angle = (magnitude * t as f64).to_radians();
                let r = quat_to_matrix(&quat_from_axis_angle(&Vec3::y(), angle));
                out.push(
                    base.iter()
                        .map(|p| {
                            let q = r * (v3(*p) - c) + c;
                            [q.x, q.y, q.z]
                        })
                        .collect(),
                );
            }
        }
        DeformPreset::Bump => {
            let radius = bounding_radius(base);
            let center = bump_center(base);
            let dist = edge_path_distances(topology, base, center);
            let normals = vertex_normals(topology, base, None);
            let reach = BUMP_RADIUS * radius;
            let falloff: Vec<f64> = dist
                .iter()
                .map(|&d| {
                    if d < reach {
                        0.5 * (1.0 + (std::f64::consts::PI * d / reach).cos())
                    } else {
                        0.0
                    }
                })
                .collect();
            for t in 0..frames {
                let amp = magnitude * radius * ramp(t);
                out.push(
                    base.iter()
                        .zip(&normals)
                        .zip(&falloff)
                        .map(|((p, n), f)| {
                            let k = amp * f;
                            [p[0] + k * n[0], p[1] + k * n[1], p[2] + k * n[2]]
                        })
                        .collect(),
                );
            }
        }
        DeformPreset::Stretch => {
            for t in 0..frames {
                let k = 1.0 + magnitude * ramp(t);
                out.push(
                    base.iter()
                        .map(|p| [c.x + k * (p[0] - c.x), p[1], p[2]])
                        .collect(),
                );
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        let (t, p) = make_grid(3, 2, 0.5);
        assert_eq!(t.n_v(), 12);
        assert_eq!(t.n_f(), 6);
        assert_eq!(p[5], [0.5, 0.5, 0.0]);
    }

    #[test]
    fn sphere_counts_and_norms() {
        let (t, p, _) = make_quad_sphere(1).unwrap();
        assert_eq!((t.n_f(), t.n_v()), (6, 8));
        let (t, p3, uv) = make_quad_sphere(3).unwrap();
        assert_eq!((t.n_f(), t.n_v()), (54, 56));
        for q in p.iter().chain(&p3) {
            assert!((v3(*q).norm() - 1.0).abs() < 1e-9);
        }
        assert!(uv.iter().all(|u| (0.0..=1.0).contains(&u[0]) && (0.0..=1.0).contains(&u[1])));
        // Euler characteristic of a sphere
        assert_eq!(t.n_v() as i64 - t.n_e() as i64 + t.n_f() as i64, 2);
    }

    #[test]
    fn sphere_faces_are_convex_and_outward() {
        let (t, p, _) = make_quad_sphere(4).unwrap();
        for f in t.faces() {
            let c = f.iter().fold(Vec3::zeros(), |a, &v| a + v3(p[v])) / 4.0;
            for k in 0..4 {
                let a = v3(p[f[k]]);
                let b = v3(p[f[(k + 1) % 4]]);
                let d = v3(p[f[(k + 2) % 4]]);
                // turning direction at every corner agrees with the outward normal
                assert!((b - a).cross(&(d - b)).dot(&c) > 0.0);
            }
        }
    }

    #[test]
    fn rigid_zero_is_static_and_rotation_composes() {
        let (t, p, _) = make_quad_sphere(2).unwrap();
        let seq = deform_sequence(&t, &p, DeformPreset::RigidRotation, 4, 0.0).unwrap();
        assert!(seq.iter().all(|f| f == &p));
        let seq = deform_sequence(&t, &p, DeformPreset::RigidRotation, 10, 2.0).unwrap();
        let r = quat_to_matrix(&quat_from_axis_angle(&Vec3::y(), 18f64.to_radians()));
        for (a, b) in p.iter().zip(&seq[9]) {
            assert!((r * v3(*a) - v3(*b)).norm() < 1e-12);
        }
    }

    #[test]
    fn bump_peak_equals_magnitude() {
        let (t, p, _) = make_quad_sphere(3).unwrap();
        let seq = deform_sequence(&t, &p, DeformPreset::Bump, 10, 0.1).unwrap();
        let max_at = |f: &Vec<[f64; 3]>| {
            f.iter()
                .zip(&p)
                .map(|(a, b)| (v3(*a) - v3(*b)).norm())
                .fold(0.0, f64::max)
        };
        assert!((max_at(&seq[9]) - 0.1).abs() < 1e-12);
        for f in &seq[..9] {
            assert!(max_at(f) < 0.1);
        }
    }

    #[test]
    fn out_of_range_magnitude_rejected() {
        let (t, p, _) = make_quad_sphere(2).unwrap();
        assert!(deform_sequence(&t, &p, DeformPreset::Bump, 3, 0.5).is_err());
        assert!(deform_sequence(&t, &p, DeformPreset::RigidRotation, 3, 45.0).is_err());
    }
}

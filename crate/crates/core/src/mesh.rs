//! Fixed quad topology, per-vertex Gaussian attributes and the adjacency
//! queries every loss is built on.
//!
//! Quads are split along the fixed diagonal `(v0, v1, v2) + (v0, v2, v3)`
//! wherever triangles are needed.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{quat_norm, tri_normal, tri_normal_grad, v3, Quat, Vec3};

/// Immutable connectivity shared by every frame of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    quad_faces: Vec<[usize; 4]>,
    uv: Vec<[f64; 2]>,
    n_e: usize,
}

impl Topology {
    pub fn new(quad_faces: Vec<[usize; 4]>, uv: Vec<[f64; 2]>) -> Result<Self> {
        let n_v = uv.len();
        for (f, face) in quad_faces.iter().enumerate() {
            for &v in face {
                if v >= n_v {
                    return Err(Error::Topology(format!(
                        "face {f} references vertex {v} but there are {n_v} vertices"
                    )));
                }
            }
            for a in 0..4 {
                for b in (a + 1)..4 {
                    if face[a] == face[b] {
                        return Err(Error::Topology(format!(
                            "face {f} repeats vertex {}",
                            face[a]
                        )));
                    }
                }
            }
        }
        for (i, t) in uv.iter().enumerate() {
            if !(0.0..=1.0).contains(&t[0]) || !(0.0..=1.0).contains(&t[1]) {
                return Err(Error::Topology(format!(
                    "uv of vertex {i} = ({}, {}) lies outside [0,1]²",
                    t[0], t[1]
                )));
            }
        }
        let edge_faces = edge_face_map(&quad_faces);
        if let Some((&(a, b), _)) = edge_faces.iter().find(|(_, fs)| fs.len() > 2) {
            return Err(Error::NonManifoldEdge(a, b));
        }
        Ok(Self {
            n_e: edge_faces.len(),
            quad_faces,
            uv,
        })
    }

    pub fn faces(&self) -> &[[usize; 4]] {
        &self.quad_faces
    }

    pub fn uv(&self) -> &[[f64; 2]] {
        &self.uv
    }

    pub fn n_v(&self) -> usize {
        self.uv.len()
    }

    pub fn n_f(&self) -> usize {
        self.quad_faces.len()
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    /// Both triangles of every quad, in face order.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        self.quad_faces
            .iter()
            .flat_map(|f| quad_triangles(f))
            .collect()
    }
}

pub fn quad_triangles(f: &[usize; 4]) -> [[usize; 3]; 2] {
    [[f[0], f[1], f[2]], [f[0], f[2], f[3]]]
}

/// Unordered edge -> incident faces (in face order).
fn edge_face_map(faces: &[[usize; 4]]) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (f, face) in faces.iter().enumerate() {
        for k in 0..4 {
            let (a, b) = (face[k], face[(k + 1) % 4]);
            map.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    map
}

/// Per-Gaussian attribute arrays, all indexed by the same vertex order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GaussianSet {
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<Quat>,
    pub scales: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.rotations.len() != n
            || self.scales.len() != n
            || self.colors.len() != n
            || self.opacities.len() != n
        {
            return Err(Error::ShapeMismatch(format!(
                "attribute lengths differ: μ {}, q {}, s {}, c {}, σ {}",
                n,
                self.rotations.len(),
                self.scales.len(),
                self.colors.len(),
                self.opacities.len()
            )));
        }
        for (i, s) in self.scales.iter().enumerate() {
            if s.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "scale of Gaussian {i} is not strictly positive"
                )));
            }
        }
        for (i, q) in self.rotations.iter().enumerate() {
            if !(quat_norm(q) > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "rotation of Gaussian {i} has zero norm"
                )));
            }
        }
        Ok(())
    }
}

/// Gaussians bound one-to-one to the vertices of a fixed-topology mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMesh {
    pub gaussians: GaussianSet,
    pub topology: Arc<Topology>,
    pub frame_index: usize,
}

impl GaussianMesh {
    pub fn new(gaussians: GaussianSet, topology: Arc<Topology>, frame_index: usize) -> Result<Self> {
        gaussians.validate()?;
        if gaussians.len() != topology.n_v() {
            return Err(Error::ShapeMismatch(format!(
                "{} Gaussians for a topology with {} vertices",
                gaussians.len(),
                topology.n_v()
            )));
        }
        Ok(Self {
            gaussians,
            topology,
            frame_index,
        })
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.gaussians.positions
    }
}

/// The two triangles (one per quad) meeting at an interior edge.
///
/// `tris[0]` lists the edge endpoints first in the winding order of face 0,
/// followed by the opposite vertex; `tris[1]` is the incident triangle of
/// face 1 in its own winding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorEdge {
    pub edge: usize,
    pub faces: [usize; 2],
    pub tris: [[usize; 3]; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub one_ring: Vec<Vec<usize>>,
    /// Edge index of each one-ring entry, parallel to `one_ring`.
    pub ring_edges: Vec<Vec<usize>>,
    pub edges: Vec<(usize, usize)>,
    pub interior_edges: Vec<InteriorEdge>,
    pub weights: Vec<f64>,
    pub lambda_w: f64,
}

impl Adjacency {
    pub fn n_e(&self) -> usize {
        self.edges.len()
    }

    pub fn weight(&self, i: usize, ring_slot: usize) -> f64 {
        self.weights[self.ring_edges[i][ring_slot]]
    }
}

/// Default `λ_w`: the inverse squared mean edge length, so an average edge gets
/// weight `e^{-1}` regardless of scene units.
pub fn default_lambda_w(topology: &Topology, positions: &[[f64; 3]]) -> f64 {
    let map = edge_face_map(topology.faces());
    if map.is_empty() {
        return 0.0;
    }
    let mean = map
        .keys()
        .map(|&(a, b)| (v3(positions[a]) - v3(positions[b])).norm())
        .sum::<f64>()
        / map.len() as f64;
    if mean > 0.0 {
        1.0 / (mean * mean)
    } else {
        0.0
    }
}

pub fn mean_edge_length(topology: &Topology, positions: &[[f64; 3]]) -> f64 {
    let map = edge_face_map(topology.faces());
    if map.is_empty() {
        return 0.0;
    }
    map.keys()
        .map(|&(a, b)| (v3(positions[a]) - v3(positions[b])).norm())
        .sum::<f64>()
        / map.len() as f64
}

/// Shortest incident edge at every vertex; `+∞` for vertices on no face.
pub fn min_ring_distances(topology: &Topology, positions: &[[f64; 3]]) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; topology.n_v()];
    for f in topology.faces() {
        for k in 0..4 {
            let (a, b) = (f[k], f[(k + 1) % 4]);
            let d = (v3(positions[a]) - v3(positions[b])).norm();
            out[a] = out[a].min(d);
            out[b] = out[b].min(d);
        }
    }
    out
}

/// Isotropic start scale: half the shortest one-ring distance.
pub fn initial_scales(topology: &Topology, positions: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    min_ring_distances(topology, positions)
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d > 0.0 && d.is_finite() {
                Ok([0.5 * d; 3])
            } else {
                Err(Error::DegenerateMesh(format!(
                    "vertex {i} has zero minimum one-ring distance"
                )))
            }
        })
        .collect()
}

pub fn build_adjacency(
    topology: &Topology,
    frame0_positions: &[[f64; 3]],
    lambda_w: f64,
) -> Result<Adjacency> {
    let n_v = topology.n_v();
    if frame0_positions.len() != n_v {
        return Err(Error::ShapeMismatch(format!(
            "{} positions for {} vertices",
            frame0_positions.len(),
            n_v
        )));
    }
    if !(lambda_w >= 0.0) {
        return Err(Error::InvalidArgument(format!("λ_w = {lambda_w} must be ≥ 0")));
    }
    let map = edge_face_map(topology.faces());
    let mut edges = Vec::with_capacity(map.len());
    let mut index = BTreeMap::new();
    let mut interior_pairs = Vec::new();
    for (&(a, b), fs) in &map {
        if fs.len() > 2 {
            return Err(Error::NonManifoldEdge(a, b));
        }
        index.insert((a, b), edges.len());
        if fs.len() == 2 {
            interior_pairs.push((edges.len(), (a, b), [fs[0], fs[1]]));
        }
        edges.push((a, b));
    }

    let mut one_ring = vec![Vec::new(); n_v];
    for &(a, b) in &edges {
        one_ring[a].push(b);
        one_ring[b].push(a);
    }
    let mut ring_edges = Vec::with_capacity(n_v);
    for (i, ring) in one_ring.iter_mut().enumerate() {
        ring.sort_unstable();
        ring_edges.push(ring.iter().map(|&j| index[&(i.min(j), i.max(j))]).collect());
    }

    let weights = edges
        .iter()
        .map(|&(a, b)| {
            let d = v3(frame0_positions[a]) - v3(frame0_positions[b]);
            (-lambda_w * d.norm_squared()).exp()
        })
        .collect();

    let faces = topology.faces();
    let interior_edges = interior_pairs
        .into_iter()
        .map(|(edge, (a, b), fs)| {
            let t0 = incident_triangle(&faces[fs[0]], a, b);
            let t1 = incident_triangle(&faces[fs[1]], a, b);
            InteriorEdge {
                edge,
                faces: fs,
                tris: [t0, t1],
            }
        })
        .collect();

    Ok(Adjacency {
        one_ring,
        ring_edges,
        edges,
        interior_edges,
        weights,
        lambda_w,
    })
}

/// Triangle of the quad's fixed split that contains edge `{a, b}`, listed as
/// `[from, to, opposite]` following the quad's winding.
fn incident_triangle(face: &[usize; 4], a: usize, b: usize) -> [usize; 3] {
    for k in 0..4 {
        let (p, q) = (face[k], face[(k + 1) % 4]);
        if (p == a && q == b) || (p == b && q == a) {
            // Edges v0v1, v1v2 belong to (v0,v1,v2); v2v3, v3v0 to (v0,v2,v3).
            let opposite = match k {
                0 => face[2],
                1 => face[0],
                2 => face[0],
                _ => face[2],
            };
            return [p, q, opposite];
        }
    }
    unreachable!("edge not part of face")
}

/// Area-weighted vertex normals. Vertices whose neighborhood has zero area
/// fall back to `previous` when given, else +z.
pub fn vertex_normals(
    topology: &Topology,
    positions: &[[f64; 3]],
    previous: Option<&[[f64; 3]]>,
) -> Vec<[f64; 3]> {
    let mut acc = vec![Vec3::zeros(); topology.n_v()];
    for face in topology.faces() {
        let mut n = Vec3::zeros();
        for t in quad_triangles(face) {
            n += tri_normal(&v3(positions[t[0]]), &v3(positions[t[1]]), &v3(positions[t[2]]));
        }
        for &v in face {
            acc[v] += n;
        }
    }
    acc.iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 1e-300 && len.is_finite() {
                [n.x / len, n.y / len, n.z / len]
            } else {
                previous.map(|p| p[i]).unwrap_or([0.0, 0.0, 1.0])
            }
        })
        .collect()
}

/// Dihedral measurement for one interior edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dihedral {
    Valid(f64),
    /// One of the incident triangles has zero area.
    Degenerate,
}

impl Dihedral {
    pub fn value(&self) -> Option<f64> {
        match self {
            Dihedral::Valid(t) => Some(*t),
            Dihedral::Degenerate => None,
        }
    }
}

/// Unsigned angle between the incident face normals of every interior edge,
/// in `[0, π]`; zero for coplanar faces.
pub fn dihedral_angles(positions: &[[f64; 3]], adjacency: &Adjacency) -> Vec<Dihedral> {
    signed_dihedral_angles(positions, adjacency)
        .into_iter()
        .map(|d| match d {
            Dihedral::Valid(t) => Dihedral::Valid(t.abs()),
            Dihedral::Degenerate => Dihedral::Degenerate,
        })
        .collect()
}

/// Signed variant in `(-π, π]`; the sign tells the fold direction relative to
/// the edge as traversed by the first face. `|signed| = unsigned`.
pub fn signed_dihedral_angles(positions: &[[f64; 3]], adjacency: &Adjacency) -> Vec<Dihedral> {
    adjacency
        .interior_edges
        .iter()
        .map(|e| signed_dihedral(positions, e))
        .collect()
}

struct DihedralParts {
    n1: Vec3,
    n2: Vec3,
    e_hat: Vec3,
    e_len: f64,
    x: f64,
    y: f64,
}

fn dihedral_parts(positions: &[[f64; 3]], e: &InteriorEdge) -> Option<DihedralParts> {
    let [a, b, c] = e.tris[0];
    let [d, f, g] = e.tris[1];
    let n1 = tri_normal(&v3(positions[a]), &v3(positions[b]), &v3(positions[c]));
    let n2 = tri_normal(&v3(positions[d]), &v3(positions[f]), &v3(positions[g]));
    let edge = v3(positions[b]) - v3(positions[a]);
    let e_len = edge.norm();
    let scale = e_len * e_len;
    if n1.norm() <= 1e-14 * scale || n2.norm() <= 1e-14 * scale || e_len == 0.0 {
        return None;
    }
    let e_hat = edge / e_len;
    let x = n1.dot(&n2);
    let y = n1.cross(&n2).dot(&e_hat);
    Some(DihedralParts {
        n1,
        n2,
        e_hat,
        e_len,
        x,
        y,
    })
}

fn signed_dihedral(positions: &[[f64; 3]], e: &InteriorEdge) -> Dihedral {
    match dihedral_parts(positions, e) {
        Some(p) => Dihedral::Valid(p.y.atan2(p.x)),
        None => Dihedral::Degenerate,
    }
}

/// Accumulates `g · dθ/dpositions` for the signed dihedral of one edge.
pub(crate) fn signed_dihedral_grad(
    positions: &[[f64; 3]],
    e: &InteriorEdge,
    g: f64,
    out: &mut [[f64; 3]],
) {
    let Some(p) = dihedral_parts(positions, e) else {
        return;
    };
    let denom = p.x * p.x + p.y * p.y;
    // θ = atan2(y, x); dθ = (x dy − y dx) / (x² + y²)
    let gy = g * p.x / denom;
    let gx = -g * p.y / denom;
    let g_n1 = p.n2 * gx + p.n2.cross(&p.e_hat) * gy;
    let g_n2 = p.n1 * gx + p.e_hat.cross(&p.n1) * gy;
    let g_ehat = p.n1.cross(&p.n2) * gy;
    let g_edge = (g_ehat - p.e_hat * p.e_hat.dot(&g_ehat)) / p.e_len;

    let mut add = |v: usize, d: Vec3| {
        out[v][0] += d.x;
        out[v][1] += d.y;
        out[v][2] += d.z;
    };
    for (tri, gn) in e.tris.iter().zip([g_n1, g_n2]) {
        let grads = tri_normal_grad(
            &v3(positions[tri[0]]),
            &v3(positions[tri[1]]),
            &v3(positions[tri[2]]),
            &gn,
        );
        for (k, gk) in grads.into_iter().enumerate() {
            add(tri[k], gk);
        }
    }
    let [a, b, _] = e.tris[0];
    add(b, g_edge);
    add(a, -g_edge);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{quat_from_axis_angle, quat_to_matrix};
    use crate::synth::{make_grid, make_quad_sphere};

    fn unit_quad() -> (Topology, Vec<[f64; 3]>) {
        let topo = Topology::new(
            vec![[0, 1, 2, 3]],
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        )
        .unwrap();
        let pos = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ];
        (topo, pos)
    }

    #[test]
    fn single_quad_weights_and_edges() {
        let (topo, pos) = unit_quad();
        let adj = build_adjacency(&topo, &pos, 0.0).unwrap();
        assert_eq!(adj.edges, vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
        assert!(adj.weights.iter().all(|&w| w == 1.0));
        let adj = build_adjacency(&topo, &pos, 1.0).unwrap();
        for w in &adj.weights {
            assert!((w - (-1.0f64).exp()).abs() < 1e-15);
        }
        assert!(adj.interior_edges.is_empty());
    }

    #[test]
    fn grid_ring_sizes_match_brute_force() {
        let (topo, pos) = make_grid(3, 3, 1.0);
        let adj = build_adjacency(&topo, &pos, 0.0).unwrap();
        // brute force: collect neighbours straight from the face list
        for v in 0..topo.n_v() {
            let mut ring: Vec<usize> = Vec::new();
            for f in topo.faces() {
                for k in 0..4 {
                    let (a, b) = (f[k], f[(k + 1) % 4]);
                    if a == v && !ring.contains(&b) {
                        ring.push(b);
                    }
                    if b == v && !ring.contains(&a) {
                        ring.push(a);
                    }
                }
            }
            ring.sort_unstable();
            assert_eq!(adj.one_ring[v], ring);
        }
        // 4x4 vertices; vertex 5 is interior, vertex 0 a corner
        assert_eq!(adj.one_ring[5].len(), 4);
        assert_eq!(adj.one_ring[0].len(), 2);
        assert_eq!(topo.n_e(), 24);
    }

    #[test]
    fn one_ring_is_symmetric() {
        let (topo, pos, _) = make_quad_sphere(4).unwrap();
        let adj = build_adjacency(&topo, &pos, 1.0).unwrap();
        for (i, ring) in adj.one_ring.iter().enumerate() {
            for &j in ring {
                assert!(adj.one_ring[j].contains(&i));
            }
        }
        assert!(adj.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn non_manifold_edge_is_rejected() {
        let uv = vec![[0.5, 0.5]; 8];
        let faces = vec![[0, 1, 2, 3], [1, 0, 4, 5], [0, 1, 6, 7]];
        match Topology::new(faces, uv) {
            Err(Error::NonManifoldEdge(0, 1)) => {}
            other => panic!("expected non-manifold error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_faces_are_rejected() {
        let uv = vec![[0.5, 0.5]; 4];
        assert!(Topology::new(vec![[0, 1, 2, 4]], uv.clone()).is_err());
        assert!(Topology::new(vec![[0, 1, 1, 3]], uv.clone()).is_err());
        assert!(Topology::new(vec![[0, 1, 2, 3]], vec![[1.5, 0.0]; 4]).is_err());
    }

    #[test]
    fn planar_grid_normals_are_up() {
        let (topo, pos) = make_grid(3, 3, 0.5);
        for n in vertex_normals(&topo, &pos, None) {
            assert!((v3(n) - Vec3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let (topo, pos, _) = make_quad_sphere(3).unwrap();
        for (p, n) in pos.iter().zip(vertex_normals(&topo, &pos, None)) {
            let angle = v3(n).angle(&v3(*p));
            assert!(angle < 0.05, "angle {angle}");
        }
    }

    #[test]
    fn degenerate_face_normal_falls_back() {
        let topo = Topology::new(vec![[0, 1, 2, 3]], vec![[0.0, 0.0]; 4]).unwrap();
        let pos = vec![[1.0, 1.0, 1.0]; 4];
        for n in vertex_normals(&topo, &pos, None) {
            assert_eq!(n, [0.0, 0.0, 1.0]);
        }
        let prev = vec![[1.0, 0.0, 0.0]; 4];
        for n in vertex_normals(&topo, &pos, Some(&prev)) {
            assert_eq!(n, [1.0, 0.0, 0.0]);
        }
    }

    fn two_quads(fold: f64) -> (Topology, Vec<[f64; 3]>) {
        // shared edge 1-4 along y; second quad rotated about it by `fold`
        let topo = Topology::new(
            vec![[0, 1, 4, 3], [1, 2, 5, 4]],
            vec![[0.0; 2]; 6],
        )
        .unwrap();
        let (s, c) = fold.sin_cos();
        let pos = vec![
            [-1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [c, 0.0, s],
            [-1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [c, 1.0, s],
        ];
        (topo, pos)
    }

    #[test]
    fn coplanar_and_right_angle_dihedrals() {
        let (topo, pos) = two_quads(0.0);
        let adj = build_adjacency(&topo, &pos, 0.0).unwrap();
        let angles = dihedral_angles(&pos, &adj);
        assert_eq!(angles.len(), 1);
        assert!(angles[0].value().unwrap().abs() < 1e-12);

        let (_, pos) = two_quads(std::f64::consts::FRAC_PI_2);
        let angles = dihedral_angles(&pos, &adj);
        assert!((angles[0].value().unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn sphere_dihedrals_match_brute_force_face_pairs() {
        let (topo, pos, _) = make_quad_sphere(3).unwrap();
        let adj = build_adjacency(&topo, &pos, 0.0).unwrap();
        let angles = dihedral_angles(&pos, &adj);
        assert_eq!(angles.len(), topo.n_e());
        for (e, a) in adj.interior_edges.iter().zip(&angles) {
            // brute force: find the triangle of each face holding the edge by search
            let (i, j) = adj.edges[e.edge];
            let mut normals = Vec::new();
            for &f in &e.faces {
                for t in quad_triangles(&topo.faces()[f]) {
                    if t.contains(&i) && t.contains(&j) {
                        let n = tri_normal(&v3(pos[t[0]]), &v3(pos[t[1]]), &v3(pos[t[2]]));
                        normals.push(n.normalize());
                    }
                }
            }
            assert_eq!(normals.len(), 2);
            let brute = normals[0].dot(&normals[1]).clamp(-1.0, 1.0).acos();
            assert!((a.value().unwrap() - brute).abs() < 1e-6);
        }
        // the cube symmetry maps faces onto faces: every cube-face patch
        // carries the same multiset of angles
        let mut per_patch: Vec<Vec<f64>> = vec![Vec::new(); 6];
        for (e, a) in adj.interior_edges.iter().zip(&angles) {
            if e.faces[0] / 9 == e.faces[1] / 9 {
                per_patch[e.faces[0] / 9].push(a.value().unwrap());
            }
        }
        for p in &mut per_patch {
            p.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        for p in &per_patch[1..] {
            for (a, b) in p.iter().zip(&per_patch[0]) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn signed_dihedral_grad_matches_finite_differences() {
        let (topo, mut pos) = two_quads(0.4);
        pos[0][2] += 0.13;
        pos[5][0] -= 0.07;
        let adj = build_adjacency(&topo, &pos, 0.0).unwrap();
        let e = adj.interior_edges[0];
        let mut grad = vec![[0.0; 3]; pos.len()];
        signed_dihedral_grad(&pos, &e, 1.0, &mut grad);
        for v in 0..pos.len() {
            for c in 0..3 {
                let h = 1e-6;
                let mut pp = pos.clone();
                let mut pm = pos.clone();
                pp[v][c] += h;
                pm[v][c] -= h;
                let fp = signed_dihedral(&pp, &e).value().unwrap();
                let fm = signed_dihedral(&pm, &e).value().unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - grad[v][c]).abs() < 1e-7, "v{v} c{c}: {fd} vs {}", grad[v][c]);
            }
        }
    }

    #[test]
    fn degenerate_triangle_is_flagged() {
        let (topo, mut pos) = two_quads(0.3);
        let adj = build_adjacency(&topo, &pos, 0.0).unwrap();
        pos[3] = pos[0];
        pos[4] = pos[0];
        // edge 1-4 now has zero length
        assert_eq!(dihedral_angles(&pos, &adj)[0], Dihedral::Degenerate);
    }

    #[test]
    fn rotation_equivariance_and_rigid_invariance() {
        let (topo, pos, _) = make_quad_sphere(3).unwrap();
        let pos: Vec<[f64; 3]> = pos
            .iter()
            .map(|p| [p[0] * 1.3, p[1] * 0.8 + 0.1 * p[0], p[2]])
            .collect();
        let adj = build_adjacency(&topo, &pos, 0.0).unwrap();
        let r = quat_to_matrix(&quat_from_axis_angle(&Vec3::new(0.3, -1.0, 0.4), 1.1));
        let t = Vec3::new(0.5, -2.0, 3.0);
        let moved: Vec<[f64; 3]> = pos
            .iter()
            .map(|p| {
                let q = r * v3(*p) + t;
                [q.x, q.y, q.z]
            })
            .collect();
        let n0 = vertex_normals(&topo, &pos, None);
        let n1 = vertex_normals(&topo, &moved, None);
        for (a, b) in n0.iter().zip(&n1) {
            assert!((r * v3(*a) - v3(*b)).norm() < 1e-6);
        }
        let a0 = dihedral_angles(&pos, &adj);
        let a1 = dihedral_angles(&moved, &adj);
        for (a, b) in a0.iter().zip(&a1) {
            assert!((a.value().unwrap() - b.value().unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn adjacency_is_deterministic() {
        let (topo, pos, _) = make_quad_sphere(3).unwrap();
        let a = build_adjacency(&topo, &pos, 2.0).unwrap();
        let b = build_adjacency(&topo, &pos, 2.0).unwrap();
        assert_eq!(a, b);
    }
}

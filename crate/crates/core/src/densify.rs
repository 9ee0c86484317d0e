//! UV-space densification: an `N × N` bilinear lattice of Gaussians per base
//! quad, with shared corner and edge sites stored once.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::math::{quat_dot, quat_normalize, Quat};
use crate::mesh::{min_ring_distances, GaussianMesh, GaussianSet, Topology};

/// Bilinear weights of lattice site `(i, j)` for the corners
/// `[A_00, A_0(N-1), A_(N-1)0, A_(N-1)(N-1)]`.
pub fn bilinear_weights(i: usize, j: usize, n: usize) -> Result<[f64; 4]> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("lattice size N = {n} must be ≥ 2")));
    }
    if i >= n || j >= n {
        return Err(Error::InvalidArgument(format!(
            "lattice site ({i}, {j}) outside 0..{n}"
        )));
    }
    let m = (n - 1) as f64;
    let (i, j) = (i as f64, j as f64);
    let d = m * m;
    Ok([
        (m - i) * (m - j) / d,
        (m - i) * j / d,
        i * (m - j) / d,
        i * j / d,
    ])
}

/// `A_ij` interpolated from the four lattice corners
/// `[A_00, A_0(N-1), A_(N-1)0, A_(N-1)(N-1)]`.
pub fn bilinear_sample(corners: [f64; 4], i: usize, j: usize, n: usize) -> Result<f64> {
    bilinear_weights(i, j, n)?;
    let m = (n - 1) as f64;
    let (fi, fj) = (i as f64, j as f64);
    Ok(((m - fi) * (m - fj) * corners[0]
        + (m - fi) * fj * corners[1]
        + fi * (m - fj) * corners[2]
        + fi * fj * corners[3])
        / (m * m))
}

/// Densified Gaussians. Indices `0..base_vertices` alias the base vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGaussianMesh {
    pub n: usize,
    pub base_vertices: usize,
    /// Base vertices `[v0, v1, v2, v3]` of the quad each site was created in.
    pub corners: Vec<[usize; 4]>,
    /// Weights of `corners`, non-negative, summing to one.
    pub weights: Vec<[f64; 4]>,
    pub gaussians: GaussianSet,
    /// Dense quads and UVs.
    pub topology: Arc<Topology>,
}

impl DenseGaussianMesh {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn interpolate3(&self, k: usize, values: &[[f64; 3]]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, w) in self.corners[k].iter().zip(&self.weights[k]) {
            for d in 0..3 {
                out[d] += w * values[*c][d];
            }
        }
        out
    }
}

// Quad corner `[v0, v1, v2, v3]` order of the weights returned for site (i, j)
// when i runs v0 → v1 and j runs v0 → v3.
fn quad_weights(i: usize, j: usize, n: usize) -> [f64; 4] {
    let [w00, w0n, wn0, wnn] = bilinear_weights(i, j, n).expect("site inside lattice");
    [w00, wn0, wnn, w0n]
}

fn interp_quat(corners: &[usize; 4], w: &[f64; 4], q: &[Quat]) -> Quat {
    let reference = q[corners[0]];
    let mut acc = [0.0; 4];
    for (c, wk) in corners.iter().zip(w) {
        let mut qc = q[*c];
        if quat_dot(&qc, &reference) < 0.0 {
            qc = qc.map(|x| -x);
        }
        for d in 0..4 {
            acc[d] += wk * qc[d];
        }
    }
    quat_normalize(&acc)
}

/// Builds the dense lattice of every base quad. Site `(i, j)` of a quad
/// `[v0, v1, v2, v3]` has `i` running along v0 → v1 and `j` along v0 → v3;
/// dense quads keep the base winding.
pub fn densify_uv(base: &GaussianMesh, n: usize) -> Result<DenseGaussianMesh> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("densify N = {n} must be ≥ 2")));
    }
    let topo = &base.topology;
    let n_v = topo.n_v();
    let mut corners: Vec<[usize; 4]> = Vec::new();
    let mut weights: Vec<[f64; 4]> = Vec::new();
    // corner aliases first, so dense id == base id
    for v in 0..n_v {
        corners.push([v; 4]);
        weights.push([1.0, 0.0, 0.0, 0.0]);
    }
    let mut edge_sites: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    let mut quads = Vec::with_capacity(topo.n_f() * (n - 1) * (n - 1));
    let last = n - 1;
    for f in topo.faces() {
        let [v0, v1, v2, v3] = *f;
        let mut ids = vec![0usize; n * n];
        for j in 0..n {
            for i in 0..n {
                let corner = match (i, j) {
                    (0, 0) => Some(v0),
                    (a, 0) if a == last => Some(v1),
                    (a, b) if a == last && b == last => Some(v2),
                    (0, b) if b == last => Some(v3),
                    _ => None,
                };
                let id = if let Some(v) = corner {
                    v
                } else {
                    // (from, to, steps from `from`) for sites on a quad edge
                    let on_edge = if j == 0 {
                        Some((v0, v1, i))
                    } else if i == last {
                        Some((v1, v2, j))
                    } else if j == last {
                        Some((v3, v2, i))
                    } else if i == 0 {
                        Some((v0, v3, j))
                    } else {
                        None
                    };
                    let mut create = || {
                        corners.push(*f);
                        weights.push(quad_weights(i, j, n));
                        corners.len() - 1
                    };
                    match on_edge {
                        Some((a, b, k)) => {
                            let key = if a < b { (a, b, k) } else { (b, a, last - k) };
                            match edge_sites.get(&key) {
                                Some(&id) => id,
                                None => {
                                    let id = create();
                                    edge_sites.insert(key, id);
                                    id
                                }
                            }
                        }
                        None => create(),
                    }
                };
                ids[j * n + i] = id;
            }
        }
        for j in 0..last {
            for i in 0..last {
                quads.push([
                    ids[j * n + i],
                    ids[j * n + i + 1],
                    ids[(j + 1) * n + i + 1],
                    ids[(j + 1) * n + i],
                ]);
            }
        }
    }

    let bg = &base.gaussians;
    let base_uv = topo.uv();
    let total = weights.len();
    let mut uv = Vec::with_capacity(total);
    let mut g = GaussianSet {
        positions: Vec::with_capacity(total),
        rotations: Vec::with_capacity(total),
        scales: Vec::new(),
        colors: Vec::with_capacity(total),
        opacities: vec![1.0; total],
    };
    for k in 0..total {
        if k < n_v {
            uv.push(base_uv[k]);
            g.positions.push(bg.positions[k]);
            g.rotations.push(bg.rotations[k]);
            g.colors.push(bg.colors[k]);
            continue;
        }
        let (c, w) = (&corners[k], &weights[k]);
        let mut t = [0.0; 2];
        for (ci, wi) in c.iter().zip(w) {
            t[0] += wi * base_uv[*ci][0];
            t[1] += wi * base_uv[*ci][1];
        }
        uv.push([t[0].clamp(0.0, 1.0), t[1].clamp(0.0, 1.0)]);
        g.rotations.push(interp_quat(c, w, &bg.rotations));
        g.positions.push([0.0; 3]);
        g.colors.push([0.0; 3]);
    }
    let topology = Arc::new(Topology::new(quads, uv)?);
    let mut dense = DenseGaussianMesh {
        n,
        base_vertices: n_v,
        corners,
        weights,
        gaussians: g,
        topology,
    };
    for k in n_v..total {
        dense.gaussians.positions[k] = dense.interpolate3(k, &bg.positions);
        dense.gaussians.colors[k] = dense.interpolate3(k, &bg.colors);
    }
    dense.gaussians.scales = lattice_scales(&dense.topology, &dense.gaussians.positions);
    Ok(dense)
}

fn lattice_scales(topology: &Topology, positions: &[[f64; 3]]) -> Vec<[f64; 3]> {
    min_ring_distances(topology, positions)
        .into_iter()
        .map(|d| {
            let d = if d.is_finite() && d > 0.0 { d } else { f64::MIN_POSITIVE };
            [d; 3]
        })
        .collect()
}

/// Recomputes dense positions from the frame's base positions with the stored
/// weights; scales become the shortest lattice edge at each site, opacity 1.
pub fn refresh_dense_positions(dense: &mut DenseGaussianMesh, base: &GaussianMesh) -> Result<()> {
    if base.gaussians.len() != dense.base_vertices {
        return Err(Error::ShapeMismatch(format!(
            "dense mesh built for {} base vertices, got {}",
            dense.base_vertices,
            base.gaussians.len()
        )));
    }
    let bp = &base.gaussians.positions;
    for k in 0..dense.len() {
        dense.gaussians.positions[k] = if k < dense.base_vertices {
            bp[k]
        } else {
            dense.interpolate3(k, bp)
        };
    }
    dense.gaussians.scales = lattice_scales(&dense.topology, &dense.gaussians.positions);
    dense.gaussians.opacities.iter_mut().for_each(|o| *o = 1.0);
    Ok(())
}

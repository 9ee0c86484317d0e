//! Scale, physical (rigid / rotation / isometry) and topological (position /
//! flattening) priors with analytic gradients.
//!
//! The physical terms sum over every vertex and its one-ring, so each edge
//! appears twice; dividing by `2 n_e` averages over directed edges.

use crate::math::{
    quat_conj, quat_dot, quat_matrix_grad, quat_mul, quat_mul_grad_left, quat_normalize,
    normalize_grad, quat_to_matrix, v3, Mat3, Quat, Vec3,
};
use crate::mesh::{signed_dihedral_angles, signed_dihedral_grad, Adjacency, Dihedral};

/// Positions and rotations of one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameView<'a> {
    pub positions: &'a [[f64; 3]],
    pub rotations: &'a [Quat],
}

/// Value of one term and its gradient with respect to the current frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TermGrad {
    pub value: f64,
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    /// Elements skipped because they were degenerate (isolated vertices,
    /// zero-area dihedral triangles).
    pub skipped: usize,
}

impl TermGrad {
    fn zeros(n: usize) -> Self {
        Self {
            value: 0.0,
            positions: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            skipped: 0,
        }
    }
}

fn add3(a: &mut [f64; 3], v: &Vec3) {
    a[0] += v.x;
    a[1] += v.y;
    a[2] += v.z;
}

fn add4(a: &mut [f64; 4], v: &[f64; 4], k: f64) {
    for c in 0..4 {
        a[c] += k * v[c];
    }
}

/// Index of the smallest component; ties resolve to the last of the tied
/// axes, which is the local normal axis (+z) at an isotropic start.
pub fn min_component(s: &[f64; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if s[k] <= s[best] {
            best = k;
        }
    }
    best
}

/// `Σᵢ ( min(sᵢ) + Σ_k max(0, s_ik − cap·s_init,ik) )` and its gradient.
pub fn scale_loss(scales: &[[f64; 3]], init: &[[f64; 3]], cap: f64) -> (f64, Vec<[f64; 3]>) {
    let mut value = 0.0;
    let mut grad = vec![[0.0; 3]; scales.len()];
    for (i, (s, s0)) in scales.iter().zip(init).enumerate() {
        let k = min_component(s);
        value += s[k];
        grad[i][k] += 1.0;
        for c in 0..3 {
            let excess = s[c] - cap * s0[c];
            if excess > 0.0 {
                value += excess;
                grad[i][c] += 1.0;
            }
        }
    }
    (value, grad)
}

/// Short-term local rigidity between frame `t-1` and frame `t`.
pub fn rigid_loss(prev: FrameView, cur: FrameView, adj: &Adjacency) -> TermGrad {
    let n = cur.positions.len();
    let mut out = TermGrad::zeros(n);
    if adj.n_e() == 0 {
        return out;
    }
    let norm = 1.0 / (2.0 * adj.n_e() as f64);
    let mut terms = Vec::new();
    for i in 0..n {
        let r_prev = quat_to_matrix(&prev.rotations[i]);
        let r_cur = quat_to_matrix(&cur.rotations[i]);
        let m = r_prev * r_cur.transpose();
        let mut g_m = Mat3::zeros();
        for (slot, &j) in adj.one_ring[i].iter().enumerate() {
            let w = adj.weight(i, slot);
            let a = v3(prev.positions[j]) - v3(prev.positions[i]);
            let b = v3(cur.positions[j]) - v3(cur.positions[i]);
            let r = a - m * b;
            let e = r.norm();
            terms.push(w * e);
            if e == 0.0 {
                continue;
            }
            let g_r = r * (norm * w / e);
            let g_b = -(m.transpose() * g_r);
            add3(&mut out.positions[j], &g_b);
            add3(&mut out.positions[i], &-g_b);
            g_m -= g_r * b.transpose();
        }
        // M = P Rᵀ  ⇒  dL/dR = (dL/dM)ᵀ P
        let g_rcur = g_m.transpose() * r_prev;
        let gq = quat_matrix_grad(&cur.rotations[i], &g_rcur);
        add4(&mut out.rotations[i], &gq, 1.0);
    }
    out.value = norm * crate::math::pairwise_sum(&terms);
    out
}

/// Relative rotation `q̂_t ⊗ q̂_{t-1}⁻¹` of every Gaussian.
fn relative_rotations(prev: &[Quat], cur: &[Quat]) -> Vec<Quat> {
    prev.iter()
        .zip(cur)
        .map(|(p, q)| quat_mul(&quat_normalize(q), &quat_conj(&quat_normalize(p))))
        .collect()
}

/// Rotation similarity of one-ring neighbours between frame `t-1` and `t`.
/// The neighbour's relative rotation is sign-aligned to the vertex's before
/// differencing, so `q` and `-q` are treated alike.
pub fn rot_loss(prev: FrameView, cur: FrameView, adj: &Adjacency) -> TermGrad {
    let n = cur.rotations.len();
    let mut out = TermGrad::zeros(n);
    if adj.n_e() == 0 {
        return out;
    }
    let norm = 1.0 / (2.0 * adj.n_e() as f64);
    let delta = relative_rotations(prev.rotations, cur.rotations);
    let mut g_delta = vec![[0.0; 4]; n];
    let mut terms = Vec::new();
    for i in 0..n {
        for (slot, &j) in adj.one_ring[i].iter().enumerate() {
            let w = adj.weight(i, slot);
            let sign = if quat_dot(&delta[j], &delta[i]) < 0.0 { -1.0 } else { 1.0 };
            let d: [f64; 4] = std::array::from_fn(|c| sign * delta[j][c] - delta[i][c]);
            let e = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3]).sqrt();
            terms.push(w * e);
            if e == 0.0 {
                continue;
            }
            let k = norm * w / e;
            add4(&mut g_delta[j], &d, sign * k);
            add4(&mut g_delta[i], &d, -k);
        }
    }
    for i in 0..n {
        let p_conj = quat_conj(&quat_normalize(&prev.rotations[i]));
        let g_hat = quat_mul_grad_left(&p_conj, &g_delta[i]);
        out.rotations[i] = normalize_grad(&cur.rotations[i], &g_hat);
    }
    out.value = norm * crate::math::pairwise_sum(&terms);
    out
}

/// Long-term isometry against frame 0. The subgradient at a zero length
/// difference is 0.
pub fn iso_loss(frame0: &[[f64; 3]], cur: &[[f64; 3]], adj: &Adjacency) -> TermGrad {
    let n = cur.len();
    let mut out = TermGrad::zeros(n);
    if adj.n_e() == 0 {
        return out;
    }
    let norm = 1.0 / (2.0 * adj.n_e() as f64);
    let mut terms = Vec::new();
    for i in 0..n {
        for (slot, &j) in adj.one_ring[i].iter().enumerate() {
            let w = adj.weight(i, slot);
            let l0 = (v3(frame0[j]) - v3(frame0[i])).norm();
            let b = v3(cur[j]) - v3(cur[i]);
            let l = b.norm();
            let diff = l0 - l;
            terms.push(w * diff.abs());
            if diff == 0.0 || l == 0.0 {
                continue;
            }
            // d|l0 - l|/dl = -sign(l0 - l)
            let g_l = -norm * w * diff.signum();
            let g_b = b * (g_l / l);
            add3(&mut out.positions[j], &g_b);
            add3(&mut out.positions[i], &-g_b);
        }
    }
    out.value = norm * crate::math::pairwise_sum(&terms);
    out
}

/// Squared distance of every vertex from its one-ring centroid, averaged over
/// vertices. Vertices without neighbours are skipped.
pub fn pos_loss(positions: &[[f64; 3]], adj: &Adjacency) -> TermGrad {
    let n = positions.len();
    let mut out = TermGrad::zeros(n);
    if n == 0 {
        return out;
    }
    let inv_n = 1.0 / n as f64;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let ring = &adj.one_ring[i];
        if ring.is_empty() {
            out.skipped += 1;
            continue;
        }
        let k = ring.len() as f64;
        let centroid = ring.iter().map(|&j| v3(positions[j])).sum::<Vec3>() / k;
        let r = v3(positions[i]) - centroid;
        terms.push(r.norm_squared());
        let g = r * (2.0 * inv_n);
        add3(&mut out.positions[i], &g);
        for &j in ring {
            add3(&mut out.positions[j], &(-g / k));
        }
    }
    out.value = inv_n * crate::math::pairwise_sum(&terms);
    out
}

/// `Σ_e (1 − cos(θ_t − θ_0))` over interior edges, with signed dihedral angles.
/// Edges degenerate in either frame are skipped.
pub fn flat_loss(positions: &[[f64; 3]], angles0: &[Dihedral], adj: &Adjacency) -> TermGrad {
    let n = positions.len();
    let mut out = TermGrad::zeros(n);
    let angles = signed_dihedral_angles(positions, adj);
    let mut terms = Vec::with_capacity(angles.len());
    for ((e, a), a0) in adj.interior_edges.iter().zip(&angles).zip(angles0) {
        match (a, a0) {
            (Dihedral::Valid(t), Dihedral::Valid(t0)) => {
                let d = t - t0;
                terms.push(1.0 - d.cos());
                signed_dihedral_grad(positions, e, d.sin(), &mut out.positions);
            }
            _ => out.skipped += 1,
        }
    }
    out.value = crate::math::pairwise_sum(&terms);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{quat_from_axis_angle, QUAT_IDENTITY};
    use crate::mesh::build_adjacency;
    use crate::synth::make_grid;

    #[test]
    fn scale_loss_examples() {
        let (v, _) = scale_loss(&[[0.001, 1.0, 1.0]], &[[1.0; 3]], 1.5);
        assert!((v - 0.001).abs() < 1e-15);
        let (v, g) = scale_loss(&[[0.5, 2.0, 1.0]], &[[1.0; 3]], 1.5);
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!(g[0], [1.0, 1.0, 0.0]);
        let s = [[0.3, 0.2, 0.4], [0.1, 0.5, 0.6]];
        let (v, _) = scale_loss(&s, &s, 1.5);
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn isotropic_tie_resolves_to_normal_axis() {
        assert_eq!(min_component(&[0.2, 0.2, 0.2]), 2);
        assert_eq!(min_component(&[0.1, 0.1, 0.2]), 1);
    }

    #[test]
    fn identity_motion_is_free() {
        let (topo, pos) = make_grid(3, 3, 1.0);
        let adj = build_adjacency(&topo, &pos, 1.0).unwrap();
        let rot = vec![QUAT_IDENTITY; pos.len()];
        let f = FrameView {
            positions: &pos,
            rotations: &rot,
        };
        assert_eq!(rigid_loss(f, f, &adj).value, 0.0);
        assert_eq!(rot_loss(f, f, &adj).value, 0.0);
        assert_eq!(iso_loss(&pos, &pos, &adj).value, 0.0);
        let angles = signed_dihedral_angles(&pos, &adj);
        assert_eq!(flat_loss(&pos, &angles, &adj).value, 0.0);
    }

    #[test]
    fn uniform_scaling_gives_unit_iso_loss() {
        let (topo, pos) = make_grid(3, 3, 1.0);
        let adj = build_adjacency(&topo, &pos, 0.0).unwrap();
        let scaled: Vec<[f64; 3]> = pos.iter().map(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]).collect();
        let l = iso_loss(&pos, &scaled, &adj);
        assert!((l.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pos_loss_examples() {
        let (topo, mut pos) = make_grid(3, 3, 1.0);
        let adj = build_adjacency(&topo, &pos, 0.0).unwrap();
        let base = pos_loss(&pos, &adj);
        // interior vertices 5, 6, 9, 10 sit on their ring centroid
        for i in [5, 6, 9, 10] {
            let ring = &adj.one_ring[i];
            let c = ring.iter().map(|&j| v3(pos[j])).sum::<Vec3>() / ring.len() as f64;
            assert!((c - v3(pos[i])).norm() < 1e-15);
        }
        // lifting an interior vertex by d adds d²/n_v for itself plus the
        // change it causes in its neighbours' centroids
        pos[5][2] += 0.3;
        let moved = pos_loss(&pos, &adj);
        let mut expect = 0.0;
        for i in 0..pos.len() {
            let ring = &adj.one_ring[i];
            let c = ring.iter().map(|&j| v3(pos[j])).sum::<Vec3>() / ring.len() as f64;
            expect += (v3(pos[i]) - c).norm_squared();
        }
        expect /= pos.len() as f64;
        assert!((moved.value - expect).abs() < 1e-15);
        assert!(moved.value > base.value);
        // the vertex's own share is exactly d²/n_v
        let own = 0.09 / 16.0;
        assert!(moved.value - base.value >= own);
    }

    #[test]
    fn folded_edge_contributes_two() {
        // strip of two quads; fold the second by π relative to frame 0
        let (topo, pos) = make_grid(2, 1, 1.0);
        let adj = build_adjacency(&topo, &pos, 0.0).unwrap();
        let angles0 = signed_dihedral_angles(&pos, &adj);
        let shifted: Vec<Dihedral> = angles0
            .iter()
            .map(|a| Dihedral::Valid(a.value().unwrap() - std::f64::consts::PI))
            .collect();
        let l = flat_loss(&pos, &shifted, &adj);
        assert!((l.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn global_rigid_motion_is_free() {
        let (topo, pos) = make_grid(3, 3, 1.0);
        let pos: Vec<[f64; 3]> = pos
            .iter()
            .enumerate()
            .map(|(i, p)| [p[0], p[1], 0.1 * ((i * 7) % 5) as f64])
            .collect();
        let adj = build_adjacency(&topo, &pos, 0.5).unwrap();
        let rot0: Vec<Quat> = (0..pos.len())
            .map(|i| quat_from_axis_angle(&Vec3::new(1.0, i as f64, 0.5), 0.1 * i as f64))
            .collect();
        let g = quat_from_axis_angle(&Vec3::new(0.2, 1.0, -0.4), 0.8);
        let rg = quat_to_matrix(&g);
        let t = Vec3::new(1.0, -2.0, 0.5);
        let pos1: Vec<[f64; 3]> = pos
            .iter()
            .map(|p| {
                let q = rg * v3(*p) + t;
                [q.x, q.y, q.z]
            })
            .collect();
        let rot1: Vec<Quat> = rot0.iter().map(|q| quat_mul(&g, q)).collect();
        let f0 = FrameView {
            positions: &pos,
            rotations: &rot0,
        };
        let f1 = FrameView {
            positions: &pos1,
            rotations: &rot1,
        };
        assert!(rigid_loss(f0, f1, &adj).value < 1e-6);
        assert!(rot_loss(f0, f1, &adj).value < 1e-6);
        assert!(iso_loss(&pos, &pos1, &adj).value < 1e-6);
        let a0 = signed_dihedral_angles(&pos, &adj);
        assert!(flat_loss(&pos1, &a0, &adj).value < 1e-6);
    }
}

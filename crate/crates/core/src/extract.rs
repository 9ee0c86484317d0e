//! Mesh extraction by Gaussian normal expansion, and texture baking of a
//! densified Gaussian mesh into UV space.

use crate::densify::DenseGaussianMesh;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{quat_to_matrix, v3};
use crate::mesh::{quad_triangles, GaussianSet};

/// Distance from the centre of Gaussian `(q, s)` to its 1σ ellipsoid surface
/// along the unit direction `n`.
pub fn ellipsoid_offset(q: &[f64; 4], s: &[f64; 3], n: &[f64; 3]) -> f64 {
    let local = quat_to_matrix(q).transpose() * v3(*n);
    let k = (local.x / s[0]).powi(2) + (local.y / s[1]).powi(2) + (local.z / s[2]).powi(2);
    (1.0 / k).sqrt()
}

/// Vertices pushed out along their normals by the ellipsoid surface distance.
/// Returns the new positions and the number of vertices left in place because
/// their normal had zero length.
pub fn normal_expansion(g: &GaussianSet, normals: &[[f64; 3]]) -> Result<(Vec<[f64; 3]>, usize)> {
    if normals.len() != g.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} normals for {} Gaussians",
            normals.len(),
            g.len()
        )));
    }
    let mut skipped = 0;
    let out = (0..g.len())
        .map(|i| {
            let p = g.positions[i];
            let n = v3(normals[i]);
            let len = n.norm();
            if !(len > 0.0) || !len.is_finite() {
                skipped += 1;
                return p;
            }
            let n = n / len;
            let d = ellipsoid_offset(&g.rotations[i], &g.scales[i], &[n.x, n.y, n.z]);
            [p[0] + d * n.x, p[1] + d * n.y, p[2] + d * n.z]
        })
        .collect();
    Ok((out, skipped))
}

/// Square UV-space texture with a coverage flag per texel.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub resolution: usize,
    pub rgb: Image,
    pub coverage: Vec<bool>,
    /// Texels strictly inside a triangle that were already written.
    pub overlaps: usize,
}

/// Rasterizes `tris` of a UV-mapped colour field. Texel `(x, y)` is centred at
/// `((x + 0.5) / R, 1 - (y + 0.5) / R)`; the first triangle to cover a texel
/// writes it.
pub fn bake_triangles(
    uv: &[[f64; 2]],
    colors: &[[f64; 3]],
    tris: &[[usize; 3]],
    resolution: usize,
) -> Result<TextureMap> {
    if resolution < 1 {
        return Err(Error::InvalidArgument("texture resolution must be ≥ 1".into()));
    }
    if uv.len() != colors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} UVs for {} colours",
            uv.len(),
            colors.len()
        )));
    }
    let r = resolution;
    let rf = r as f64;
    let mut rgb = Image::new(r, r);
    let mut coverage = vec![false; r * r];
    let mut overlaps = 0;
    // texel-centre coordinates: texel (x, y) sits at integer (x, y)
    let to_px = |t: [f64; 2]| [t[0] * rf - 0.5, (1.0 - t[1]) * rf - 0.5];
    for t in tris {
        let p = [to_px(uv[t[0]]), to_px(uv[t[1]]), to_px(uv[t[2]])];
        let area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        if area.abs() < 1e-14 {
            continue;
        }
        let xmin = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let xmax = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max).floor().min(rf - 1.0);
        let ymin = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let ymax = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max).floor().min(rf - 1.0);
        if xmin > xmax || ymin > ymax {
            continue;
        }
        let eps = 1e-10;
        for y in ymin as usize..=ymax as usize {
            for x in xmin as usize..=xmax as usize {
                let (px, py) = (x as f64, y as f64);
                let w0 = ((p[1][0] - px) * (p[2][1] - py) - (p[2][0] - px) * (p[1][1] - py)) / area;
                let w1 = ((p[2][0] - px) * (p[0][1] - py) - (p[0][0] - px) * (p[2][1] - py)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < -eps || w1 < -eps || w2 < -eps {
                    continue;
                }
                let idx = y * r + x;
                if coverage[idx] {
                    if w0 > eps && w1 > eps && w2 > eps {
                        overlaps += 1;
                    }
                    continue;
                }
                let (a, b, c) = (colors[t[0]], colors[t[1]], colors[t[2]]);
                let mut out = [0.0; 3];
                for k in 0..3 {
                    out[k] = w0 * a[k] + w1 * b[k] + w2 * c[k];
                }
                rgb.set_pixel(x, y, out);
                coverage[idx] = true;
            }
        }
    }
    Ok(TextureMap {
        resolution: r,
        rgb,
        coverage,
        overlaps,
    })
}

/// Bakes the dense Gaussian colours, triangulating each dense quad by the
/// fixed `(v0, v1, v2) + (v0, v2, v3)` diagonal.
pub fn bake_texture(dense: &DenseGaussianMesh, resolution: usize) -> Result<TextureMap> {
    let tris: Vec<[usize; 3]> = dense
        .topology
        .faces()
        .iter()
        .flat_map(quad_triangles)
        .collect();
    bake_triangles(dense.topology.uv(), &dense.gaussians.colors, &tris, resolution)
}

impl TextureMap {
    pub fn covered_fraction(&self) -> f64 {
        self.coverage.iter().filter(|&&c| c).count() as f64 / self.coverage.len() as f64
    }

    /// Fills uncovered texels: `passes` rounds of averaging already-filled
    /// 8-neighbours, then the mean covered colour everywhere still empty.
    pub fn dilated(&self, passes: usize) -> Image {
        let r = self.resolution;
        let mut img = self.rgb.clone();
        let mut filled = self.coverage.clone();
        for _ in 0..passes {
            let mut next = filled.clone();
            let mut out = img.clone();
            for y in 0..r {
                for x in 0..r {
                    if filled[y * r + x] {
                        continue;
                    }
                    let mut acc = [0.0; 3];
                    let mut cnt = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                            if nx < 0 || ny < 0 || nx >= r as i64 || ny >= r as i64 {
                                continue;
                            }
                            let k = ny as usize * r + nx as usize;
                            if filled[k] {
                                let c = img.pixel(nx as usize, ny as usize);
                                for d in 0..3 {
                                    acc[d] += c[d];
                                }
                                cnt += 1.0;
                            }
                        }
                    }
                    if cnt > 0.0 {
                        out.set_pixel(x, y, acc.map(|v| v / cnt));
                        next[y * r + x] = true;
                    }
                }
            }
            img = out;
            filled = next;
        }
        let covered: Vec<usize> = (0..r * r).filter(|&k| self.coverage[k]).collect();
        let mut pad = [0.0; 3];
        if !covered.is_empty() {
            for &k in &covered {
                for d in 0..3 {
                    pad[d] += self.rgb.data[k * 3 + d];
                }
            }
            pad = pad.map(|v| v / covered.len() as f64);
        }
        for k in 0..r * r {
            if !filled[k] {
                img.data[k * 3..k * 3 + 3].copy_from_slice(&pad);
            }
        }
        img
    }
}

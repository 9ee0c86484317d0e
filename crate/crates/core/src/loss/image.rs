//! Photometric objective `(1-λ)·L1 + λ·D-SSIM` and its gradient.

use crate::error::{Error, Result};
use crate::image::Image;

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct ImageLoss {
    pub value: f64,
    pub l1: f64,
    /// Mean SSIM; `None` when the D-SSIM weight is zero and it was skipped.
    pub ssim: Option<f64>,
    pub dssim: f64,
    /// dLoss/dRendered, same layout as the rendered image.
    pub grad: Image,
}

fn gaussian_kernel(size: usize) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= s);
    k
}

/// Separable "same" correlation with zero padding on a single-channel plane.
/// The kernel is symmetric, so this is also its own adjoint.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64], tmp: &mut Vec<f64>, out: &mut Vec<f64>) {
    let r = (k.len() / 2) as isize;
    tmp.clear();
    tmp.resize(w * h, 0.0);
    out.clear();
    out.resize(w * h, 0.0);
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * row[xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
}

/// `λ` weights the D-SSIM term. `mask` holds optional per-pixel weights in
/// `[0, 1]` applied to both terms; both terms are weighted means over pixels.
pub fn image_loss(
    rendered: &Image,
    target: &Image,
    mask: Option<&[f64]>,
    lambda: f64,
    window: usize,
) -> Result<ImageLoss> {
    rendered.check_same_shape(target)?;
    let (w, h) = (rendered.width, rendered.height);
    let npix = w * h;
    if let Some(m) = mask {
        if m.len() != npix {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} entries for {} pixels",
                m.len(),
                npix
            )));
        }
        if m.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument("mask weights must lie in [0, 1]".into()));
        }
    }
    let weight = |p: usize| mask.map(|m| m[p]).unwrap_or(1.0);
    let wsum: f64 = (0..npix).map(weight).sum();
    let mut grad = Image::new(w, h);
    if wsum == 0.0 {
        return Ok(ImageLoss {
            value: 0.0,
            l1: 0.0,
            ssim: None,
            dssim: 0.0,
            grad,
        });
    }
    let norm = 1.0 / (3.0 * wsum);

    let mut l1 = 0.0;
    for p in 0..npix {
        let m = weight(p);
        for c in 0..3 {
            let d = rendered.data[p * 3 + c] - target.data[p * 3 + c];
            l1 += m * d.abs();
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad.data[p * 3 + c] = (1.0 - lambda) * norm * m * s;
        }
    }
    l1 *= norm;

    let mut ssim = 0.0;
    if lambda > 0.0 {
        if window % 2 == 0 || window == 0 || window > w.min(h) {
            return Err(Error::InvalidArgument(format!(
                "SSIM window {window} must be odd and ≤ min image dimension {}",
                w.min(h)
            )));
        }
        let k = gaussian_kernel(window);
        let mut tmp = Vec::new();
        let (mut mx, mut my, mut exx, mut eyy, mut exy) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut gm = vec![0.0; npix];
        let mut gxx = vec![0.0; npix];
        let mut gxy = vec![0.0; npix];
        let mut back = Vec::new();
        for c in 0..3 {
            let x: Vec<f64> = (0..npix).map(|p| rendered.data[p * 3 + c]).collect();
            let y: Vec<f64> = (0..npix).map(|p| target.data[p * 3 + c]).collect();
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
            blur(&x, w, h, &k, &mut tmp, &mut mx);
            blur(&y, w, h, &k, &mut tmp, &mut my);
            blur(&xx, w, h, &k, &mut tmp, &mut exx);
            blur(&yy, w, h, &k, &mut tmp, &mut eyy);
            blur(&xy, w, h, &k, &mut tmp, &mut exy);
            for p in 0..npix {
                let (ux, uy) = (mx[p], my[p]);
                let a1 = 2.0 * ux * uy + C1;
                let a2 = 2.0 * (exy[p] - ux * uy) + C2;
                let b1 = ux * ux + uy * uy + C1;
                let b2 = (exx[p] - ux * ux) + (eyy[p] - uy * uy) + C2;
                let s = a1 * a2 / (b1 * b2);
                let m = weight(p);
                ssim += m * s;
                // d(loss)/dS = -λ/2 · m · norm
                let gs = -0.5 * lambda * m * norm;
                gm[p] = gs
                    * s
                    * (2.0 * uy / a1 - 2.0 * uy / a2 - 2.0 * ux / b1 + 2.0 * ux / b2);
                gxx[p] = gs * (-s / b2);
                gxy[p] = gs * (2.0 * s / a2);
            }
            blur(&gm, w, h, &k, &mut tmp, &mut back);
            for p in 0..npix {
                grad.data[p * 3 + c] += back[p];
            }
            blur(&gxx, w, h, &k, &mut tmp, &mut back);
            for p in 0..npix {
                grad.data[p * 3 + c] += 2.0 * x[p] * back[p];
            }
            blur(&gxy, w, h, &k, &mut tmp, &mut back);
            for p in 0..npix {
                grad.data[p * 3 + c] += y[p] * back[p];
            }
        }
        ssim *= norm;
    }
    let dssim = if lambda > 0.0 { 0.5 * (1.0 - ssim) } else { 0.0 };
    Ok(ImageLoss {
        value: (1.0 - lambda) * l1 + lambda * dssim,
        l1,
        ssim: (lambda > 0.0).then_some(ssim),
        dssim,
        grad,
    })
}

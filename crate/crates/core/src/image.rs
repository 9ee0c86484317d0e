use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major RGB image with `f64` channels, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Box-filter downsample by an integer factor (trailing rows/columns that
    /// do not fill a whole block are dropped).
    pub fn downsample(&self, factor: usize) -> Image {
        if factor <= 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = Image::new(w, h);
        let norm = 1.0 / (factor * factor) as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set_pixel(x, y, [acc[0] * norm, acc[1] * norm, acc[2] * norm]);
            }
        }
        out
    }

    /// Bilinear lookup at continuous texel coordinates (texel centers at
    /// integer + 0.5), clamped at the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let mut out = [0.0; 3];
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        for c in 0..3 {
            out[c] = (1.0 - ty) * ((1.0 - tx) * p00[c] + tx * p10[c])
                + ty * ((1.0 - tx) * p01[c] + tx * p11[c]);
        }
        out
    }

    /// Texture lookup with OBJ-style UVs: `v = 1` is the top row.
    pub fn sample_uv(&self, uv: [f64; 2]) -> [f64; 3] {
        self.sample_bilinear(uv[0] * self.width as f64, (1.0 - uv[1]) * self.height as f64)
    }
}

/// Peak signal-to-noise ratio in dB for signals in `[0, 1]`, over the pixels
/// where `mask` is true (all pixels when `None`).
pub fn psnr(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64> {
    a.check_same_shape(b)?;
    let mut se = 0.0;
    let mut n = 0usize;
    for p in 0..a.width * a.height {
        if mask.map(|m| m[p]).unwrap_or(true) {
            for c in 0..3 {
                let d = a.data[p * 3 + c] - b.data[p * 3 + c];
                se += d * d;
            }
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("PSNR over an empty mask".into()));
    }
    let mse = se / n as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

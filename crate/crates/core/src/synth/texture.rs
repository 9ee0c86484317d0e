//! Procedural textures defined over UV space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    /// Bandlimited checkerboard: a truncated odd-harmonic square wave per axis.
    Checker,
    /// Checkerboard plus smooth value-noise mottling.
    Mottled,
    /// Single colour everywhere. Tracking has nothing to lock onto.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureSpec {
    pub kind: TextureKind,
    /// Checker period in UV units (two cells per period).
    pub period: f64,
    /// Number of odd harmonics kept in the square wave (1 = pure sinusoid).
    pub harmonics: usize,
    pub color_a: [f64; 3],
    pub color_b: [f64; 3],
    pub mottle_amplitude: f64,
    /// Lattice cells per unit UV of the coarsest noise octave.
    pub mottle_frequency: f64,
    pub seed: u64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            kind: TextureKind::Mottled,
            period: 0.5,
            harmonics: 2,
            color_a: [0.85, 0.65, 0.3],
            color_b: [0.15, 0.3, 0.6],
            mottle_amplitude: 0.15,
            mottle_frequency: 6.0,
            seed: 0,
        }
    }
}

const NOISE_LATTICE: usize = 64;
const OCTAVES: usize = 3;

struct Noise {
    values: Vec<[f64; 3]>,
}

impl Noise {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..NOISE_LATTICE * NOISE_LATTICE)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        Self { values }
    }

    fn at(&self, i: i64, j: i64) -> [f64; 3] {
        let m = NOISE_LATTICE as i64;
        self.values[(j.rem_euclid(m) * m + i.rem_euclid(m)) as usize]
    }

    /// Smoothstep-interpolated value noise, fractal sum of a few octaves.
    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        let mut amp = 1.0;
        let mut freq = 1.0;
        let mut norm = 0.0;
        for _ in 0..OCTAVES {
            let (fx, fy) = (x * freq, y * freq);
            let (i, j) = (fx.floor(), fy.floor());
            let (tx, ty) = (fx - i, fy - j);
            let sx = tx * tx * (3.0 - 2.0 * tx);
            let sy = ty * ty * (3.0 - 2.0 * ty);
            let (i, j) = (i as i64, j as i64);
            let (a, b, c, d) = (self.at(i, j), self.at(i + 1, j), self.at(i, j + 1), self.at(i + 1, j + 1));
            for k in 0..3 {
                let top = a[k] + sx * (b[k] - a[k]);
                let bot = c[k] + sx * (d[k] - c[k]);
                out[k] += amp * (top + sy * (bot - top));
            }
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        out.map(|v| v / norm)
    }
}

fn square_wave(x: f64, harmonics: usize) -> f64 {
    let mut s = 0.0;
    let mut norm = 0.0;
    for h in 0..harmonics.max(1) {
        let k = (2 * h + 1) as f64;
        s += (std::f64::consts::TAU * k * x).sin() / k;
        norm += 1.0 / k;
    }
    s / norm
}

impl TextureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::Config(format!("texture period {} must be > 0", self.period)));
        }
        if self.harmonics == 0 {
            return Err(Error::Config("texture harmonics must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Renders the texture at `resolution × resolution`, texel centres sampled.
    pub fn render(&self, resolution: usize) -> Result<Image> {
        self.validate()?;
        if resolution == 0 {
            return Err(Error::InvalidArgument("texture resolution must be ≥ 1".into()));
        }
        let noise = (self.kind == TextureKind::Mottled).then(|| Noise::new(self.seed));
        let mut img = Image::new(resolution, resolution);
        let r = resolution as f64;
        for y in 0..resolution {
            for x in 0..resolution {
                let u = (x as f64 + 0.5) / r;
                let v = 1.0 - (y as f64 + 0.5) / r;
                img.set_pixel(x, y, self.eval(u, v, noise.as_ref()));
            }
        }
        Ok(img)
    }

    fn eval(&self, u: f64, v: f64, noise: Option<&Noise>) -> [f64; 3] {
        if self.kind == TextureKind::Flat {
            return self.color_a;
        }
        let g = square_wave(u / self.period, self.harmonics)
            * square_wave(v / self.period, self.harmonics);
        let t = 0.5 + 0.5 * g;
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = self.color_a[k] + t * (self.color_b[k] - self.color_a[k]);
        }
        if let Some(n) = noise {
            let m = n.sample(u * self.mottle_frequency, v * self.mottle_frequency);
            for k in 0..3 {
                c[k] += self.mottle_amplitude * m[k];
            }
        }
        c.map(|x| x.clamp(0.0, 1.0))
    }
}

//! File formats: quad OBJ, PNG images, JSON documents, binary Gaussian
//! checkpoints and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb, Rgba};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh::{GaussianSet, Topology};

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPath(path.to_path_buf()))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            fs::create_dir_all(p)?;
        }
    }
    Ok(())
}

/// Parses `v`, `vt` and quad `f` records. Faces may be `a`, `a/t`, `a/t/n`
/// or `a//n`; texture indices must agree with one UV per vertex. Files
/// without `vt` records load with zero UVs.
pub fn parse_obj(text: &str, path: &str) -> Result<(Topology, Vec<[f64; 3]>)> {
    let fmt = |line: usize, message: String| Error::Format {
        path: path.to_string(),
        line,
        message,
    };
    let mut positions = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut faces = Vec::new();
    let mut corner_uv: Vec<(usize, usize, usize)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut it = body.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let nums = |it: std::str::SplitWhitespace, want: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = it
                .map(|t| t.parse::<f64>().map_err(|_| fmt(line, format!("bad number `{t}`"))))
                .collect::<Result<_>>()?;
            if vals.len() < want || vals.iter().any(|v| !v.is_finite()) {
                return Err(fmt(line, format!("expected {want} finite numbers")));
            }
            Ok(vals)
        };
        match tag {
            "v" => {
                let v = nums(it, 3)?;
                positions.push([v[0], v[1], v[2]]);
            }
            "vt" => {
                let v = nums(it, 2)?;
                uvs.push([v[0], v[1]]);
            }
            "f" => {
                let corners: Vec<&str> = it.collect();
                if corners.len() != 4 {
                    return Err(fmt(line, format!("face has {} corners, only quads are supported", corners.len())));
                }
                let mut face = [0usize; 4];
                for (c, tok) in corners.iter().enumerate() {
                    let mut parts = tok.split('/');
                    let resolve = |s: Option<&str>, n: usize, what: &str| -> Result<Option<usize>> {
                        match s {
                            None | Some("") => Ok(None),
                            Some(s) => {
                                let i: i64 = s.parse().map_err(|_| fmt(line, format!("bad {what} index `{s}`")))?;
                                let idx = if i > 0 { i - 1 } else { n as i64 + i };
                                if i == 0 || idx < 0 || idx >= n as i64 {
                                    return Err(fmt(line, format!("{what} index {i} out of range")));
                                }
                                Ok(Some(idx as usize))
                            }
                        }
                    };
                    let v = resolve(parts.next(), positions.len(), "vertex")?
                        .ok_or_else(|| fmt(line, "missing vertex index".into()))?;
                    if let Some(t) = resolve(parts.next(), uvs.len(), "texture")? {
                        corner_uv.push((v, t, line));
                    }
                    face[c] = v;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    let mut uv = vec![[0.0; 2]; positions.len()];
    let mut seen: Vec<Option<usize>> = vec![None; positions.len()];
    for (v, t, line) in corner_uv {
        match seen[v] {
            None => {
                seen[v] = Some(t);
                uv[v] = uvs[t];
            }
            Some(prev) if prev != t && uvs[prev] != uvs[t] => {
                return Err(fmt(
                    line,
                    format!("vertex {} has conflicting UVs (texture indices {} and {})", v + 1, prev + 1, t + 1),
                ));
            }
            _ => {}
        }
    }
    let topology = Topology::new(faces, uv)?;
    Ok((topology, positions))
}

pub fn load_obj(path: &Path) -> Result<(Topology, Vec<[f64; 3]>)> {
    require(path)?;
    let text = fs::read_to_string(path)?;
    parse_obj(&text, &path.display().to_string())
}

/// Writes positions, per-vertex UVs and `v/vt` quads. Floats use the
/// shortest representation that reads back exactly.
pub fn save_obj(path: &Path, topology: &Topology, positions: &[[f64; 3]]) -> Result<()> {
    if positions.len() != topology.n_v() {
        return Err(Error::ShapeMismatch(format!(
            "{} positions for {} vertices",
            positions.len(),
            topology.n_v()
        )));
    }
    ensure_parent(path)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in positions {
        writeln!(w, "v {} {} {}", p[0], p[1], p[2])?;
    }
    for t in topology.uv() {
        writeln!(w, "vt {} {}", t[0], t[1])?;
    }
    for f in topology.faces() {
        writeln!(
            w,
            "f {}/{} {}/{} {}/{} {}/{}",
            f[0] + 1,
            f[0] + 1,
            f[1] + 1,
            f[1] + 1,
            f[2] + 1,
            f[2] + 1,
            f[3] + 1,
            f[3] + 1
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Any PNG as linear RGB in `[0, 1]`; alpha is dropped.
pub fn load_png(path: &Path) -> Result<Image> {
    require(path)?;
    let img = image::open(path)?.into_rgb32f();
    let (w, h) = img.dimensions();
    Ok(Image {
        width: w as usize,
        height: h as usize,
        data: img.into_raw().into_iter().map(f64::from).collect(),
    })
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 16-bit RGB PNG.
pub fn save_png16(path: &Path, img: &Image) -> Result<()> {
    ensure_parent(path)?;
    let data: Vec<u16> = img.data.iter().map(|&v| to_u16(v)).collect();
    let buf: ImageBuffer<Rgb<u16>, _> = ImageBuffer::from_raw(img.width as u32, img.height as u32, data)
        .ok_or_else(|| Error::ShapeMismatch("image buffer size".into()))?;
    buf.save(path)?;
    Ok(())
}

/// 8-bit RGB PNG.
pub fn save_png8(path: &Path, img: &Image) -> Result<()> {
    ensure_parent(path)?;
    let data: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(img.width as u32, img.height as u32, data)
        .ok_or_else(|| Error::ShapeMismatch("image buffer size".into()))?;
    buf.save(path)?;
    Ok(())
}

/// 16-bit RGBA PNG with straight (unpremultiplied) alpha. `rgb` is the
/// composite over black, so colour is divided by alpha where it is nonzero.
pub fn save_rgba_png(path: &Path, rgb: &Image, alpha: &[f64]) -> Result<()> {
    if alpha.len() != rgb.width * rgb.height {
        return Err(Error::ShapeMismatch(format!(
            "{} alpha values for a {}x{} image",
            alpha.len(),
            rgb.width,
            rgb.height
        )));
    }
    ensure_parent(path)?;
    let mut data = Vec::with_capacity(alpha.len() * 4);
    for (k, &a) in alpha.iter().enumerate() {
        for d in 0..3 {
            let c = rgb.data[k * 3 + d];
            data.push(to_u16(if a > 0.0 { c / a } else { 0.0 }));
        }
        data.push(to_u16(a));
    }
    let buf: ImageBuffer<Rgba<u16>, _> = ImageBuffer::from_raw(rgb.width as u32, rgb.height as u32, data)
        .ok_or_else(|| Error::ShapeMismatch("image buffer size".into()))?;
    buf.save(path)?;
    Ok(())
}

/// 8-bit grayscale mask, 255 where `mask` is set.
pub fn save_mask_png(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    ensure_parent(path)?;
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(width as u32, height as u32, data)
        .ok_or_else(|| Error::ShapeMismatch("mask size".into()))?;
    buf.save(path)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require(path)?;
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

const MAGIC: &[u8; 4] = b"TMGS";
const VERSION: u32 = 1;

/// What a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckpointKind {
    /// One Gaussian per base-mesh vertex.
    Base = 0,
    /// UV-densified Gaussians.
    Dense = 1,
}

/// Gaussian checkpoint layout, all little-endian:
///
/// ```text
/// magic "TMGS" | version u32 | kind u32 | frame u64 | n u64
/// positions 3n f64 | rotations 4n f64 (w, x, y, z) | scales 3n f64
/// colors 3n f64 | opacities n f64
/// ```
pub fn encode_checkpoint(kind: CheckpointKind, frame: usize, g: &GaussianSet) -> Vec<u8> {
    let n = g.len();
    let mut out = Vec::with_capacity(24 + n * 14 * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out.extend_from_slice(&(frame as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    let mut put = |vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    put(g.positions.as_flattened());
    put(g.rotations.as_flattened());
    put(g.scales.as_flattened());
    put(g.colors.as_flattened());
    put(&g.opacities);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointKind, usize, GaussianSet)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 28 || &bytes[0..4] != MAGIC {
        return Err(bad("missing TMGS header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = match u32_at(8) {
        0 => CheckpointKind::Base,
        1 => CheckpointKind::Dense,
        k => return Err(Error::Checkpoint(format!("unknown kind {k}"))),
    };
    let frame = u64_at(12) as usize;
    let n = u64_at(20) as usize;
    let body = &bytes[28..];
    if n.checked_mul(14 * 8) != Some(body.len()) {
        return Err(Error::Checkpoint(format!(
            "{} payload bytes do not hold {n} Gaussians",
            body.len()
        )));
    }
    let vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (p, rest) = vals.split_at(3 * n);
    let (q, rest) = rest.split_at(4 * n);
    let (sc, rest) = rest.split_at(3 * n);
    let (c, o) = rest.split_at(3 * n);
    let v3s = |x: &[f64]| x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>();
    let positions = v3s(p);
    let rotations = q.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
    let scales = v3s(sc);
    let colors = v3s(c);
    let opacities = o.to_vec();
    let g = GaussianSet {
        positions,
        rotations,
        scales,
        colors,
        opacities,
    };
    g.validate()?;
    Ok((kind, frame, g))
}

pub fn save_checkpoint(path: &Path, kind: CheckpointKind, frame: usize, g: &GaussianSet) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, encode_checkpoint(kind, frame, g))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointKind, usize, GaussianSet)> {
    require(path)?;
    decode_checkpoint(&fs::read(path)?)
}

/// Output files each command produced, relative to the work directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub commands: BTreeMap<String, Vec<PathBuf>>,
}

impl RunManifest {
    pub const FILE: &'static str = "run_manifest.json";

    pub fn load_or_default(work: &Path) -> Result<Self> {
        let p = work.join(Self::FILE);
        if p.exists() {
            read_json(&p)
        } else {
            Ok(Self::default())
        }
    }

    /// Replaces the entry of `command` and writes the manifest, after
    /// checking that every listed file exists and is non-empty.
    pub fn record(work: &Path, command: &str, files: Vec<PathBuf>) -> Result<Self> {
        for f in &files {
            let meta = fs::metadata(work.join(f)).map_err(|_| Error::MissingPath(work.join(f)))?;
            if meta.len() == 0 {
                return Err(Error::Checkpoint(format!("output {} is empty", f.display())));
            }
        }
        let mut m = Self::load_or_default(work)?;
        m.commands.insert(command.to_string(), files);
        write_json(&work.join(Self::FILE), &m)?;
        Ok(m)
    }
}

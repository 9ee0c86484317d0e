//! C ABI over the topomesh library.
//!
//! Objects cross the boundary as opaque handles created by `tm_*_new`/`load`
//! functions and released with the matching `tm_*_free`. Every fallible call
//! returns a [`TmStatus`]; the message of the last failure on the calling
//! thread is available from [`tm_last_error_message`]. Arrays are
//! caller-allocated and flat: positions are `3 * n` doubles, images are
//! row-major RGB doubles in `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use topomesh::densify::densify_uv;
use topomesh::extract::{bake_texture, normal_expansion};
use topomesh::image::Image;
use topomesh::io::{load_checkpoint, load_obj, save_checkpoint, save_obj, CheckpointKind};
use topomesh::math::{Mat3, Vec3};
use topomesh::mesh::{vertex_normals, GaussianMesh, Topology};
use topomesh::pipeline::initial_gaussians;
use topomesh::render::{render, Camera, RenderSettings};
use topomesh::synth::make_quad_sphere;
use topomesh::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Topology = 3,
    DegenerateMesh = 4,
    ShapeMismatch = 5,
    Format = 6,
    MissingPath = 7,
    Io = 8,
    NonFinite = 9,
    Checkpoint = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&Error> for TmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Topology(_) | Error::NonManifoldEdge(..) => TmStatus::Topology,
            Error::DegenerateMesh(_) => TmStatus::DegenerateMesh,
            Error::ShapeMismatch(_) => TmStatus::ShapeMismatch,
            Error::InvalidArgument(_) | Error::Config(_) => TmStatus::InvalidArgument,
            Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } | Error::NonFiniteEvaluation(_) => {
                TmStatus::NonFinite
            }
            Error::Format { .. } | Error::Json(_) => TmStatus::Format,
            Error::MissingPath(_) => TmStatus::MissingPath,
            Error::Checkpoint(_) => TmStatus::Checkpoint,
            Error::Io(_) | Error::Image(_) => TmStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: TmStatus, message: impl Into<String>) -> TmStatus {
    LAST_ERROR.with(|m| *m.borrow_mut() = message.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), TmStatus>) -> TmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TmStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(TmStatus::Panic, "internal panic"),
    }
}

trait OrFail<T> {
    fn or_fail(self) -> Result<T, TmStatus>;
}

impl<T> OrFail<T> for topomesh::Result<T> {
    fn or_fail(self) -> Result<T, TmStatus> {
        self.map_err(|e| fail(TmStatus::from(&e), e.to_string()))
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), TmStatus> {
    if p.is_null() {
        Err(fail(TmStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, TmStatus> {
    non_null(p, "path")?;
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(TmStatus::InvalidArgument, "path is not UTF-8"))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], TmStatus> {
    non_null(p, what)?;
    if len < need {
        return Err(fail(
            TmStatus::BufferTooSmall,
            format!("{what} holds {len} values, {need} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], TmStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn flatten3(v: &[[f64; 3]], out: &mut [f64]) {
    out.copy_from_slice(v.as_flattened());
}

/// Quad mesh with per-vertex UVs.
pub struct TmMesh {
    topology: Arc<Topology>,
    positions: Vec<[f64; 3]>,
}

/// Gaussians bound to the vertices of a mesh.
pub struct TmGaussians {
    mesh: GaussianMesh,
}

/// Pinhole camera; `world_to_cam` is a row-major 4x4 rigid transform.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TmCamera {
    pub focal: [f64; 2],
    pub principal_point: [f64; 2],
    pub world_to_cam: [f64; 16],
    pub width: u32,
    pub height: u32,
}

impl TmCamera {
    fn to_camera(self) -> Result<Camera, TmStatus> {
        let m = &self.world_to_cam;
        let r = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Camera::new(
            self.focal,
            self.principal_point,
            r,
            Vec3::new(m[3], m[7], m[11]),
            self.width as usize,
            self.height as usize,
        )
        .or_fail()
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn tm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|m| {
        let m = m.borrow();
        if !buf.is_null() && len > 0 {
            let n = m.len().min(len - 1);
            ptr::copy_nonoverlapping(m.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        m.len()
    })
}

/// Loads a quad OBJ.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_load_obj(path: *const c_char, out: *mut *mut TmMesh) -> TmStatus {
    guard(|| {
        non_null(out, "out")?;
        let (t, p) = load_obj(path_arg(path)?).or_fail()?;
        *out = Box::into_raw(Box::new(TmMesh {
            topology: Arc::new(t),
            positions: p,
        }));
        Ok(())
    })
}

/// Unit quad sphere with `subdivision` quads per cube-face edge.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_quad_sphere(subdivision: u32, out: *mut *mut TmMesh) -> TmStatus {
    guard(|| {
        non_null(out, "out")?;
        let (t, p, _) = make_quad_sphere(subdivision as usize).or_fail()?;
        *out = Box::into_raw(Box::new(TmMesh {
            topology: Arc::new(t),
            positions: p,
        }));
        Ok(())
    })
}

/// # Safety
/// `mesh` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_free(mesh: *mut TmMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` and `path` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_save_obj(mesh: *const TmMesh, path: *const c_char) -> TmStatus {
    guard(|| {
        non_null(mesh, "mesh")?;
        let m = &*mesh;
        save_obj(path_arg(path)?, &m.topology, &m.positions).or_fail()
    })
}

/// # Safety
/// `mesh` must be valid or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_vertex_count(mesh: *const TmMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.positions.len())
}

/// # Safety
/// `mesh` must be valid or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_face_count(mesh: *const TmMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.topology.n_f())
}

/// Copies `4 * faces` vertex indices.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_faces(mesh: *const TmMesh, out: *mut u32, len: usize) -> TmStatus {
    guard(|| {
        non_null(mesh, "mesh")?;
        let m = &*mesh;
        let dst = out_slice(out, len, 4 * m.topology.n_f(), "out")?;
        for (d, v) in dst.iter_mut().zip(m.topology.faces().as_flattened()) {
            *d = *v as u32;
        }
        Ok(())
    })
}

/// Copies `3 * vertices` coordinates.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_positions(mesh: *const TmMesh, out: *mut f64, len: usize) -> TmStatus {
    guard(|| {
        non_null(mesh, "mesh")?;
        let m = &*mesh;
        flatten3(&m.positions, out_slice(out, len, 3 * m.positions.len(), "out")?);
        Ok(())
    })
}

/// Replaces all positions; `len` must be exactly `3 * vertices`.
///
/// # Safety
/// `values` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_set_positions(mesh: *mut TmMesh, values: *const f64, len: usize) -> TmStatus {
    guard(|| {
        non_null(mesh, "mesh")?;
        let m = &mut *mesh;
        if len != 3 * m.positions.len() {
            return Err(fail(
                TmStatus::ShapeMismatch,
                format!("{len} values for {} vertices", m.positions.len()),
            ));
        }
        let v = in_slice(values, len, "values")?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(fail(TmStatus::NonFinite, "positions must be finite"));
        }
        for (p, c) in m.positions.iter_mut().zip(v.chunks_exact(3)) {
            *p = [c[0], c[1], c[2]];
        }
        Ok(())
    })
}

/// Area-weighted unit vertex normals, `3 * vertices` values.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn tm_mesh_normals(mesh: *const TmMesh, out: *mut f64, len: usize) -> TmStatus {
    guard(|| {
        non_null(mesh, "mesh")?;
        let m = &*mesh;
        let n = vertex_normals(&m.topology, &m.positions, None);
        flatten3(&n, out_slice(out, len, 3 * n.len(), "out")?);
        Ok(())
    })
}

/// Binds one Gaussian to each vertex, colours sampled from an RGB texture of
/// `width * height * 3` doubles at the vertex UVs.
///
/// # Safety
/// `mesh`, `texture` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tm_gaussians_from_mesh(
    mesh: *const TmMesh,
    texture: *const f64,
    width: u32,
    height: u32,
    out: *mut *mut TmGaussians,
) -> TmStatus {
    guard(|| {
        non_null(mesh, "mesh")?;
        non_null(out, "out")?;
        let m = &*mesh;
        let (w, h) = (width as usize, height as usize);
        if w == 0 || h == 0 {
            return Err(fail(TmStatus::InvalidArgument, "texture size is zero"));
        }
        let data = in_slice(texture, w * h * 3, "texture")?.to_vec();
        let tex = Image { width: w, height: h, data };
        let g = initial_gaussians(&m.topology, &m.positions, &tex).or_fail()?;
        let mesh = GaussianMesh::new(g, m.topology.clone(), 0).or_fail()?;
        *out = Box::into_raw(Box::new(TmGaussians { mesh }));
        Ok(())
    })
}

/// Loads a base checkpoint onto the topology of `mesh`.
///
/// # Safety
/// `mesh`, `path` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tm_gaussians_load(
    mesh: *const TmMesh,
    path: *const c_char,
    out: *mut *mut TmGaussians,
) -> TmStatus {
    guard(|| {
        non_null(mesh, "mesh")?;
        non_null(out, "out")?;
        let (kind, frame, g) = load_checkpoint(path_arg(path)?).or_fail()?;
        if kind != CheckpointKind::Base {
            return Err(fail(TmStatus::Checkpoint, "not a base-mesh checkpoint"));
        }
        let mesh = GaussianMesh::new(g, (*mesh).topology.clone(), frame).or_fail()?;
        *out = Box::into_raw(Box::new(TmGaussians { mesh }));
        Ok(())
    })
}

/// # Safety
/// `g` and `path` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tm_gaussians_save(g: *const TmGaussians, path: *const c_char) -> TmStatus {
    guard(|| {
        non_null(g, "gaussians")?;
        let m = &(*g).mesh;
        save_checkpoint(path_arg(path)?, CheckpointKind::Base, m.frame_index, &m.gaussians).or_fail()
    })
}

/// # Safety
/// `g` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tm_gaussians_free(g: *mut TmGaussians) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// # Safety
/// `g` must be valid or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn tm_gaussians_count(g: *const TmGaussians) -> usize {
    g.as_ref().map_or(0, |g| g.mesh.gaussians.len())
}

/// Copies `3 * count` centre coordinates.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn tm_gaussians_positions(g: *const TmGaussians, out: *mut f64, len: usize) -> TmStatus {
    guard(|| {
        non_null(g, "gaussians")?;
        let p = &(*g).mesh.gaussians.positions;
        flatten3(p, out_slice(out, len, 3 * p.len(), "out")?);
        Ok(())
    })
}

/// Renders into `width * height * 3` colours and, when `alpha` is not null,
/// `width * height` accumulated opacities. `oracle` disables the low-pass
/// filter and both early-termination thresholds.
///
/// # Safety
/// `g` and `camera` must be valid; the buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tm_render(
    g: *const TmGaussians,
    camera: *const TmCamera,
    oracle: bool,
    rgb: *mut f64,
    rgb_len: usize,
    alpha: *mut f64,
    alpha_len: usize,
) -> TmStatus {
    guard(|| {
        non_null(g, "gaussians")?;
        non_null(camera, "camera")?;
        let cam = (*camera).to_camera()?;
        let settings = if oracle {
            RenderSettings::oracle()
        } else {
            RenderSettings::default()
        };
        let px = cam.width * cam.height;
        let dst = out_slice(rgb, rgb_len, 3 * px, "rgb")?;
        let r = render(&(*g).mesh.gaussians, &cam, &settings);
        dst.copy_from_slice(&r.rgb.data);
        if !alpha.is_null() {
            out_slice(alpha, alpha_len, px, "alpha")?.copy_from_slice(&r.alpha);
        }
        Ok(())
    })
}

/// Mesh vertices pushed out along their normals to the Gaussian surfaces,
/// `3 * count` values.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn tm_extract_mesh(g: *const TmGaussians, out: *mut f64, len: usize) -> TmStatus {
    guard(|| {
        non_null(g, "gaussians")?;
        let m = &(*g).mesh;
        let normals = vertex_normals(&m.topology, m.positions(), None);
        let (pos, _) = normal_expansion(&m.gaussians, &normals).or_fail()?;
        flatten3(&pos, out_slice(out, len, 3 * pos.len(), "out")?);
        Ok(())
    })
}

/// Densifies every quad into an `n x n` lattice and bakes the interpolated
/// colours into a `resolution²` RGB texture. `coverage`, when not null,
/// receives 1 for texels inside a triangle and 0 elsewhere.
///
/// # Safety
/// `g` must be valid; the buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn tm_bake_texture(
    g: *const TmGaussians,
    n: u32,
    resolution: u32,
    rgb: *mut f64,
    rgb_len: usize,
    coverage: *mut u8,
    coverage_len: usize,
) -> TmStatus {
    guard(|| {
        non_null(g, "gaussians")?;
        let r = resolution as usize;
        let dst = out_slice(rgb, rgb_len, 3 * r * r, "rgb")?;
        let dense = densify_uv(&(*g).mesh, n as usize).or_fail()?;
        let map = bake_texture(&dense, r).or_fail()?;
        dst.copy_from_slice(&map.rgb.data);
        if !coverage.is_null() {
            let c = out_slice(coverage, coverage_len, r * r, "coverage")?;
            for (d, s) in c.iter_mut().zip(&map.coverage) {
                *d = u8::from(*s);
            }
        }
        Ok(())
    })
}

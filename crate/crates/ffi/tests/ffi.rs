use std::ffi::{c_char, CStr, CString};
use std::ptr;

use topomesh_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        tm_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn sphere(sub: u32) -> *mut TmMesh {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { tm_mesh_quad_sphere(sub, &mut m) }, TmStatus::Ok);
    m
}

fn gray_gaussians(mesh: *const TmMesh) -> *mut TmGaussians {
    let tex = vec![0.5; 4 * 4 * 3];
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { tm_gaussians_from_mesh(mesh, tex.as_ptr(), 4, 4, &mut g) }, TmStatus::Ok);
    g
}

fn front_camera(w: u32) -> TmCamera {
    let f = w as f64;
    TmCamera {
        focal: [f, f],
        principal_point: [f / 2.0, f / 2.0],
        world_to_cam: [
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 3.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
        width: w,
        height: w,
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(tm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn mesh_round_trip_through_obj() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("s.obj").to_str().unwrap()).unwrap();
    let m = sphere(2);
    unsafe {
        let (nv, nf) = (tm_mesh_vertex_count(m), tm_mesh_face_count(m));
        assert_eq!((nv, nf), (26, 24));
        let mut faces = vec![0u32; 4 * nf];
        assert_eq!(tm_mesh_faces(m, faces.as_mut_ptr(), faces.len()), TmStatus::Ok);
        assert!(faces.iter().all(|&i| (i as usize) < nv));

        let mut p = vec![0.0; 3 * nv];
        assert_eq!(tm_mesh_positions(m, p.as_mut_ptr(), p.len()), TmStatus::Ok);
        for v in &mut p {
            *v *= 2.0;
        }
        assert_eq!(tm_mesh_set_positions(m, p.as_ptr(), p.len()), TmStatus::Ok);
        assert_eq!(tm_mesh_save_obj(m, path.as_ptr()), TmStatus::Ok);

        let mut m2 = ptr::null_mut();
        assert_eq!(tm_mesh_load_obj(path.as_ptr(), &mut m2), TmStatus::Ok);
        let mut p2 = vec![0.0; 3 * nv];
        assert_eq!(tm_mesh_positions(m2, p2.as_mut_ptr(), p2.len()), TmStatus::Ok);
        assert_eq!(p, p2);

        let mut n = vec![0.0; 3 * nv];
        assert_eq!(tm_mesh_normals(m2, n.as_mut_ptr(), n.len()), TmStatus::Ok);
        for (v, q) in n.chunks(3).zip(p2.chunks(3)) {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            assert!(dot > 0.0);
        }
        tm_mesh_free(m);
        tm_mesh_free(m2);
    }
}

#[test]
fn errors_are_reported() {
    let m = sphere(1);
    unsafe {
        let mut small = [0.0; 2];
        assert_eq!(tm_mesh_positions(m, small.as_mut_ptr(), 2), TmStatus::BufferTooSmall);
        assert!(last_error().contains("needed"));
        assert_eq!(tm_mesh_positions(ptr::null(), small.as_mut_ptr(), 2), TmStatus::NullPointer);
        assert_eq!(tm_mesh_set_positions(m, small.as_ptr(), 2), TmStatus::ShapeMismatch);

        let mut out = ptr::null_mut();
        let missing = CString::new("/nonexistent/mesh.obj").unwrap();
        let s = tm_mesh_load_obj(missing.as_ptr(), &mut out);
        assert!(matches!(s, TmStatus::MissingPath | TmStatus::Io), "{s:?}");
        assert!(out.is_null());
        assert!(!last_error().is_empty());

        let mut cam = front_camera(8);
        cam.width = 0;
        let g = gray_gaussians(m);
        let mut rgb = vec![0.0; 3 * 64];
        assert_eq!(
            tm_render(g, &cam, false, rgb.as_mut_ptr(), rgb.len(), ptr::null_mut(), 0),
            TmStatus::InvalidArgument
        );
        // truncation keeps the buffer NUL-terminated
        let mut tiny = [1 as c_char; 4];
        let full = tm_last_error_message(tiny.as_mut_ptr(), 4);
        assert!(full > 3);
        assert_eq!(tiny[3], 0);
        tm_gaussians_free(g);
        tm_mesh_free(m);
        tm_mesh_free(ptr::null_mut());
    }
}

#[test]
fn render_extract_bake_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = CString::new(dir.path().join("g.tmgs").to_str().unwrap()).unwrap();
    let m = sphere(3);
    let g = gray_gaussians(m);
    unsafe {
        let n = tm_gaussians_count(g);
        assert_eq!(n, tm_mesh_vertex_count(m));

        let cam = front_camera(24);
        let mut rgb = vec![0.0; 3 * 24 * 24];
        let mut alpha = vec![0.0; 24 * 24];
        let s = tm_render(g, &cam, false, rgb.as_mut_ptr(), rgb.len(), alpha.as_mut_ptr(), alpha.len());
        assert_eq!(s, TmStatus::Ok, "{}", last_error());
        let centre = 12 * 24 + 12;
        assert!(alpha[centre] > 0.9);
        assert!((rgb[3 * centre] - 0.5).abs() < 0.05);
        assert!(alpha[0] < 0.01);

        let mut ext = vec![0.0; 3 * n];
        assert_eq!(tm_extract_mesh(g, ext.as_mut_ptr(), ext.len()), TmStatus::Ok);
        let mut base = vec![0.0; 3 * n];
        assert_eq!(tm_gaussians_positions(g, base.as_mut_ptr(), base.len()), TmStatus::Ok);
        for (e, b) in ext.chunks(3).zip(base.chunks(3)) {
            let (re, rb) = (e.iter().map(|v| v * v).sum::<f64>(), b.iter().map(|v| v * v).sum::<f64>());
            assert!(re >= rb - 1e-12);
        }

        let r = 16;
        let mut tex = vec![0.0; 3 * r * r];
        let mut cov = vec![0u8; r * r];
        let s = tm_bake_texture(g, 2, r as u32, tex.as_mut_ptr(), tex.len(), cov.as_mut_ptr(), cov.len());
        assert_eq!(s, TmStatus::Ok, "{}", last_error());
        assert!(cov.iter().any(|&c| c == 1));
        for (t, c) in tex.chunks(3).zip(&cov) {
            if *c == 1 {
                assert!((t[0] - 0.5).abs() < 1e-6);
            }
        }
        assert_eq!(
            tm_bake_texture(g, 1, r as u32, tex.as_mut_ptr(), tex.len(), ptr::null_mut(), 0),
            TmStatus::InvalidArgument
        );

        assert_eq!(tm_gaussians_save(g, ckpt.as_ptr()), TmStatus::Ok);
        let mut g2 = ptr::null_mut();
        assert_eq!(tm_gaussians_load(m, ckpt.as_ptr(), &mut g2), TmStatus::Ok);
        let mut rgb2 = vec![0.0; rgb.len()];
        tm_render(g2, &cam, false, rgb2.as_mut_ptr(), rgb2.len(), ptr::null_mut(), 0);
        assert_eq!(rgb, rgb2);

        let other = sphere(2);
        let mut g3 = ptr::null_mut();
        assert_ne!(tm_gaussians_load(other, ckpt.as_ptr(), &mut g3), TmStatus::Ok);
        assert!(g3.is_null());

        tm_gaussians_free(g);
        tm_gaussians_free(g2);
        tm_mesh_free(m);
        tm_mesh_free(other);
    }
}

#[test]
fn header_lists_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/topomesh.h")).unwrap();
    for f in ["tm_render", "tm_bake_texture", "tm_last_error_message", "TM_STATUS_BUFFER_TOO_SMALL"] {
        assert!(h.contains(f), "{f}");
    }
}

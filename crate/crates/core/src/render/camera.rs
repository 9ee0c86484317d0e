use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// Calibrated pinhole camera, OpenCV convention (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Mat3,
    /// Camera center in world coordinates; the world-to-camera translation is
    /// `-rotation * center`.
    pub center: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        focal: [f64; 2],
        principal_point: [f64; 2],
        rotation: Mat3,
        translation: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            fx: focal[0],
            fy: focal[1],
            cx: principal_point[0],
            cy: principal_point[1],
            rotation,
            center: -(rotation.transpose() * translation),
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths ({}, {}) must be positive",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera image size is zero".into()));
        }
        if !(0.0..=self.width as f64).contains(&self.cx)
            || !(0.0..=self.height as f64).contains(&self.cy)
        {
            return Err(Error::InvalidArgument(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let r = &self.rotation;
        if (r * r.transpose() - Mat3::identity()).norm() > 1e-6 {
            return Err(Error::InvalidArgument(
                "world_to_cam rotation is not orthonormal".into(),
            ));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` roughly opposite to the
    /// image y axis, and a horizontal field of view in radians.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_x: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        let mut cam = Self::new(
            [f, f],
            [0.5 * width as f64, 0.5 * height as f64],
            rotation,
            Vec3::zeros(),
            width,
            height,
        )?;
        cam.center = eye;
        Ok(cam)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p - self.center)
    }

    pub fn translation(&self) -> Vec3 {
        -(self.rotation * self.center)
    }

    /// Same view at `1/factor` resolution.
    pub fn downscaled(&self, factor: usize) -> Camera {
        if factor <= 1 {
            return self.clone();
        }
        let k = factor as f64;
        Camera {
            fx: self.fx / k,
            fy: self.fy / k,
            cx: self.cx / k,
            cy: self.cy / k,
            rotation: self.rotation,
            center: self.center,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    /// Translates the world by `offset`: the returned camera sees
    /// `p + offset` where `self` saw `p`.
    pub fn translated_world(&self, offset: &Vec3) -> Camera {
        let mut c = self.clone();
        c.center = self.center + offset;
        c
    }
}

/// 1.1 times the largest distance from a camera centre to the centroid of all
/// centres. Zero for fewer than two distinct cameras.
pub fn camera_extent(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 0.0;
    }
    let c = cameras.iter().fold(Vec3::zeros(), |a, cam| a + cam.center) / cameras.len() as f64;
    1.1 * cameras.iter().map(|cam| (cam.center - c).norm()).fold(0.0, f64::max)
}

/// JSON record: `{focal, principal_point, world_to_cam (4x4 row-major), width, height}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub focal: [f64; 2],
    pub principal_point: [f64; 2],
    pub world_to_cam: [f64; 16],
    pub width: usize,
    pub height: usize,
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let mut m = [0.0; 16];
        let t = c.translation();
        for r in 0..3 {
            for k in 0..3 {
                m[r * 4 + k] = c.rotation[(r, k)];
            }
            m[r * 4 + 3] = t[r];
        }
        m[15] = 1.0;
        Self {
            focal: [c.fx, c.fy],
            principal_point: [c.cx, c.cy],
            world_to_cam: m,
            width: c.width,
            height: c.height,
        }
    }
}

impl TryFrom<&CameraRecord> for Camera {
    type Error = Error;

    fn try_from(r: &CameraRecord) -> Result<Self> {
        let m = &r.world_to_cam;
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::InvalidArgument(
                "world_to_cam bottom row must be [0, 0, 0, 1]".into(),
            ));
        }
        let rotation = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vec3::new(m[3], m[7], m[11]);
        Camera::new(
            r.focal,
            r.principal_point,
            rotation,
            translation,
            r.width,
            r.height,
        )
    }
}

pub fn cameras_to_json(cameras: &[Camera]) -> Result<String> {
    let records: Vec<CameraRecord> = cameras.iter().map(CameraRecord::from).collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

pub fn cameras_from_json(text: &str) -> Result<Vec<Camera>> {
    let records: Vec<CameraRecord> = serde_json::from_str(text)?;
    records.iter().map(Camera::try_from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_projects_target_to_principal_point() {
        let cam = Camera::look_at(
            Vec3::new(3.0, 1.0, 2.0),
            Vec3::zeros(),
            Vec3::y(),
            1.0,
            64,
            48,
        )
        .unwrap();
        let p = cam.to_camera(&Vec3::zeros());
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((p.z - 14f64.sqrt()).abs() < 1e-12);
        assert!((cam.center - Vec3::new(3.0, 1.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let cam = Camera::look_at(Vec3::new(0.0, 0.5, 3.0), Vec3::zeros(), Vec3::y(), 0.9, 32, 32)
            .unwrap();
        let text = cameras_to_json(&[cam.clone()]).unwrap();
        let back = cameras_from_json(&text).unwrap();
        assert_eq!(back.len(), 1);
        assert!((back[0].rotation - cam.rotation).norm() < 1e-15);
        assert_eq!(back[0].width, 32);
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        let r = Mat3::identity();
        assert!(Camera::new([0.0, 1.0], [1.0, 1.0], r, Vec3::zeros(), 4, 4).is_err());
        assert!(Camera::new([1.0, 1.0], [5.0, 1.0], r, Vec3::zeros(), 4, 4).is_err());
    }
}

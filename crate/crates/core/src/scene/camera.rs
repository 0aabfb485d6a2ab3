use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pinhole camera. Camera space is x right, y down, z forward; pixel
/// (i, j) is sampled at image coordinates (i + 0.5, j + 0.5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: [[f64; 4]; 4],
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    world_to_camera: Vec<f64>,
}

impl TryFrom<CameraJson> for Camera {
    type Error = String;

    fn try_from(j: CameraJson) -> std::result::Result<Self, String> {
        if j.world_to_camera.len() != 16 {
            return Err(format!("world_to_camera needs 16 values, got {}", j.world_to_camera.len()));
        }
        let mut m = [[0.0; 4]; 4];
        for (k, v) in j.world_to_camera.iter().enumerate() {
            m[k / 4][k % 4] = *v;
        }
        Ok(Camera {
            width: j.width,
            height: j.height,
            fx: j.fx,
            fy: j.fy,
            cx: j.cx,
            cy: j.cy,
            world_to_camera: m,
        })
    }
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        CameraJson {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            world_to_camera: c.world_to_camera.iter().flatten().copied().collect(),
        }
    }
}

impl Camera {
    /// Camera at `eye` looking at `target`, with vertical field of view in degrees.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], width: u32, height: u32, fov_y_deg: f64) -> Self {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::from(up)).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = rot[(r, c)];
            }
            m[r][3] = t[r];
        }
        m[3][3] = 1.0;
        let fy = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Camera {
            width,
            height,
            fx: fy,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            world_to_camera: m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCamera(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty image {}x{}", self.width, self.height));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return bad(format!("principal point ({}, {}) outside the image", self.cx, self.cy));
        }
        let r = self.rotation();
        let err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if !(err <= 1e-5) {
            return bad(format!("rotation block is not orthonormal (error {err:.2e})"));
        }
        if self.world_to_camera.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite pose".into());
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let m = &self.world_to_camera;
        Matrix3::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.world_to_camera[0][3], self.world_to_camera[1][3], self.world_to_camera[2][3])
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: [f64; 3]) -> Vector3<f64> {
        self.rotation() * Vector3::from(p) + self.translation()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Same pose and field of view at a different resolution.
    pub fn resized(&self, width: u32, height: u32) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            width,
            height,
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            world_to_camera: self.world_to_camera,
        }
    }
}

/// Reads a JSON array of cameras and validates each one.
pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let cams: Vec<Camera> = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    for (i, c) in cams.iter().enumerate() {
        c.validate().map_err(|e| Error::format(format!("camera {i}: {e}")))?;
    }
    Ok(cams)
}

pub fn save_cameras(cams: &[Camera], path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(cams).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

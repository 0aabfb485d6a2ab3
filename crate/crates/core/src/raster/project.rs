use nalgebra::{Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use super::{ALPHA_MIN, LOW_PASS, MIN_SCREEN_RADIUS, NEAR_PLANE};
use crate::scene::{sh, Camera, Gaussian, GaussianScene};

/// A Gaussian splatted onto the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    /// Image coordinates of the center (pixel (i, j) is sampled at (i + ½, j + ½)).
    pub mean2d: [f64; 2],
    /// Screen covariance (xx, xy, yy) including the low-pass term.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d` (xx, xy, yy).
    pub conic: [f64; 3],
    pub depth: f64,
    /// ⌈3·sqrt(λ_max(cov2d))⌉.
    pub radius: u32,
    /// Half-width of the square outside which the opacity falls below the skip cutoff.
    pub extent: f64,
    pub opacity: f64,
    pub color: [f32; 3],
    pub source_index: u32,
}

impl ProjectedGaussian {
    /// Unclamped opacity contribution at an image point.
    #[inline]
    pub fn alpha_at(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean2d[0];
        let dy = y - self.mean2d[1];
        let power = -0.5 * (self.conic[0] * dx * dx + self.conic[2] * dy * dy) - self.conic[1] * dx * dy;
        self.opacity * power.exp()
    }

    /// Front-to-back ordering: depth, then source index.
    #[inline]
    pub fn order_key(&self) -> (f64, u32) {
        (self.depth, self.source_index)
    }
}

struct CameraFrame {
    rot: Matrix3<f64>,
    trans: Vector3<f64>,
    center: Vector3<f64>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

fn project_one(g: &Gaussian, index: usize, cam: &CameraFrame, sh_degree: Option<u8>) -> Option<ProjectedGaussian> {
    let p = Vector3::new(g.position[0] as f64, g.position[1] as f64, g.position[2] as f64);
    let t = cam.rot * p + cam.trans;
    if t.z <= NEAR_PLANE {
        return None;
    }
    let opacity = g.opacity as f64;
    if opacity < ALPHA_MIN {
        return None;
    }
    let inv_z = 1.0 / t.z;
    let jac = Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * t.x * inv_z * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * t.y * inv_z * inv_z,
    );
    let m = jac * cam.rot;
    let cov = m * g.covariance() * m.transpose();
    let a = cov[(0, 0)] + LOW_PASS;
    let b = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    let c = cov[(1, 1)] + LOW_PASS;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let lambda_max = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let three_sigma = 3.0 * lambda_max.sqrt();
    if three_sigma < MIN_SCREEN_RADIUS {
        return None;
    }
    // α ≥ 1/255 needs Mahalanobis² ≤ 2·ln(255·o), which is bounded by |d|²/λ_max.
    let extent = (2.0 * (opacity / ALPHA_MIN).ln() * lambda_max).sqrt() + 1e-3;
    let color = match sh_degree {
        Some(deg) => {
            let d = p - cam.center;
            let n = d.norm();
            let dir = if n > 0.0 { [d.x / n, d.y / n, d.z / n] } else { [0.0, 0.0, 1.0] };
            sh::eval_color(deg, &g.sh, dir)
        }
        None => [0.0; 3],
    };
    Some(ProjectedGaussian {
        mean2d: [cam.fx * t.x * inv_z + cam.cx, cam.fy * t.y * inv_z + cam.cy],
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: t.z,
        radius: three_sigma.ceil() as u32,
        extent,
        opacity,
        color,
        source_index: index as u32,
    })
}

fn frame(camera: &Camera) -> CameraFrame {
    CameraFrame {
        rot: camera.rotation(),
        trans: camera.translation(),
        center: camera.center(),
        fx: camera.fx,
        fy: camera.fy,
        cx: camera.cx,
        cy: camera.cy,
    }
}

/// Projects every visible Gaussian, in source order, with view-dependent color.
pub fn project(scene: &GaussianScene, camera: &Camera) -> Vec<ProjectedGaussian> {
    let cam = frame(camera);
    let deg = scene.sh_degree();
    scene
        .gaussians()
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_one(g, i, &cam, Some(deg)))
        .collect()
}

/// Like [`project`] but skips color evaluation.
pub fn project_geometry(scene: &GaussianScene, camera: &Camera) -> Vec<ProjectedGaussian> {
    let cam = frame(camera);
    scene
        .gaussians()
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_one(g, i, &cam, None))
        .collect()
}

/// Projects only the Gaussians that can reach pixel (`x`, `y`); the result
/// renders that pixel exactly like the full set (see `render_pixel`).
///
/// A cheap conservative bound on the footprint (from the largest scale and the
/// Frobenius norm of the projection Jacobian) rejects most splats before the
/// full covariance is formed.
pub fn project_near_pixel(scene: &GaussianScene, camera: &Camera, x: u32, y: u32) -> Vec<ProjectedGaussian> {
    let cam = frame(camera);
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    scene
        .gaussians()
        .par_iter()
        .enumerate()
        .filter(|(_, g)| {
            let p = Vector3::new(g.position[0] as f64, g.position[1] as f64, g.position[2] as f64);
            let t = cam.rot * p + cam.trans;
            let o = g.opacity as f64;
            if t.z <= NEAR_PLANE || o < ALPHA_MIN {
                return false;
            }
            let (ax, ay) = (t.x / t.z, t.y / t.z);
            let s = g.max_scale() as f64;
            let jac_f2 = (cam.fx * cam.fx * (1.0 + ax * ax) + cam.fy * cam.fy * (1.0 + ay * ay)) / (t.z * t.z);
            let lambda_bound = jac_f2 * s * s + LOW_PASS;
            let bound = ((2.0 * (o / ALPHA_MIN).ln() * lambda_bound).sqrt() + 1e-3) * 1.001 + 1e-6;
            (cam.fx * ax + cam.cx - px).abs() <= bound && (cam.fy * ay + cam.cy - py).abs() <= bound
        })
        .filter_map(|(i, g)| project_one(g, i, &cam, None))
        .collect()
}

//! Gaussian scene representation, cameras, feature storage and file formats.

mod camera;
mod checkpoint;
mod features;
mod ply;
pub mod sh;

pub use camera::{load_cameras, save_cameras, Camera};
pub use checkpoint::{config_digest, Checkpoint, OptimizerState, CHECKPOINT_VERSION};
pub use features::{init_features, load_features, save_features, FeatureStore, FEATURE_FILE_VERSION, FEATURE_HEADER_LEN};
pub use ply::{load_scene, read_scene, save_scene, write_scene};

use nalgebra::{Matrix3, UnitQuaternion, Quaternion};
use crate::{Error, Result};

/// Maximum number of spherical-harmonics coefficients per channel (degree 3).
pub const MAX_SH_COEFFS: usize = 16;

/// One splat with activated parameters.
///
/// Files store the log of `scale` and the logit of `opacity`; the loader
/// applies the activations and normalizes `rotation` (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub position: [f32; 3],
    pub scale: [f32; 3],
    pub rotation: [f32; 4],
    pub opacity: f32,
    /// SH coefficients per RGB channel; entries beyond the scene degree are zero.
    pub sh: [[f32; 3]; MAX_SH_COEFFS],
}

impl Gaussian {
    /// Builds a Gaussian from file-domain values (log-scale, opacity logit,
    /// unnormalized quaternion), applying the same activations as the loader.
    pub fn from_stored(
        position: [f32; 3],
        log_scale: [f32; 3],
        rotation: [f32; 4],
        opacity_logit: f32,
        sh: [[f32; 3]; MAX_SH_COEFFS],
    ) -> Self {
        Gaussian {
            position,
            scale: log_scale.map(|s| (s as f64).exp() as f32),
            rotation: normalize_quat(rotation),
            opacity: sigmoid(opacity_logit as f64) as f32,
            sh,
        }
    }

    /// A DC-only Gaussian with the given linear RGB color.
    pub fn with_color(position: [f32; 3], scale: [f32; 3], opacity: f32, rgb: [f32; 3]) -> Self {
        let mut sh = [[0.0; 3]; MAX_SH_COEFFS];
        sh[0] = rgb.map(|c| ((c as f64 - 0.5) / sh::SH_C0) as f32);
        Gaussian {
            position,
            scale,
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity,
            sh,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation.map(|v| v as f64);
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
    }

    /// World-space covariance R·diag(s²)·Rᵀ.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = Matrix3::from_diagonal(&nalgebra::Vector3::from(self.scale.map(|v| (v as f64) * (v as f64))));
        r * s * r.transpose()
    }

    pub fn max_scale(&self) -> f32 {
        self.scale.iter().copied().fold(0.0, f32::max)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn normalize_quat(q: [f32; 4]) -> [f32; 4] {
    let q64 = q.map(|v| v as f64);
    let n = q64.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return [1.0, 0.0, 0.0, 0.0];
    }
    q64.map(|v| (v / n) as f32)
}

/// Pre-trained Gaussians with frozen geometry and appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    gaussians: Vec<Gaussian>,
    sh_degree: u8,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>, sh_degree: u8) -> Self {
        assert!(sh_degree <= 3, "SH degree {sh_degree} > 3");
        GaussianScene { gaussians, sh_degree }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn sh_degree(&self) -> u8 {
        self.sh_degree
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn gaussians_mut(&mut self) -> &mut Vec<Gaussian> {
        &mut self.gaussians
    }

    pub fn get(&self, i: usize) -> &Gaussian {
        &self.gaussians[i]
    }

    pub fn positions(&self) -> Vec<[f32; 3]> {
        self.gaussians.iter().map(|g| g.position).collect()
    }

    /// Axis-aligned bounds of the Gaussian centers, `None` for an empty scene.
    pub fn bounds(&self) -> Option<([f32; 3], [f32; 3])> {
        let first = self.gaussians.first()?.position;
        Some(self.gaussians.iter().fold((first, first), |(mut lo, mut hi), g| {
            for k in 0..3 {
                lo[k] = lo[k].min(g.position[k]);
                hi[k] = hi[k].max(g.position[k]);
            }
            (lo, hi)
        }))
    }

    /// A camera framing every Gaussian center, looking down at 35° from the
    /// -y side with z up (50° vertical field of view).
    pub fn overview_camera(&self, width: u32, height: u32) -> Result<Camera> {
        let (lo, hi) = self.bounds().ok_or(Error::EmptyScene)?;
        let center: [f64; 3] = std::array::from_fn(|c| 0.5 * (lo[c] as f64 + hi[c] as f64));
        let radius = 0.5 * (0..3).map(|c| (hi[c] - lo[c]) as f64).map(|d| d * d).sum::<f64>().sqrt();
        let fov = 50.0f64;
        let dist = 1.1 * radius.max(1e-3) / (0.5 * fov).to_radians().sin();
        let elev = 35.0f64.to_radians();
        let eye = [center[0], center[1] - dist * elev.cos(), center[2] + dist * elev.sin()];
        Ok(Camera::look_at(eye, center, [0.0, 0.0, 1.0], width, height, fov))
    }
}

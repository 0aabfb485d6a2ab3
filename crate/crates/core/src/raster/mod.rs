//! Tile-based splat rasterizer for colors and two-level features, plus the
//! exact adjoint of the feature blend.
//!
//! Geometry (projection, conics, opacities, transmittance) is evaluated in
//! f64; buffers are stored as f32.

mod backward;
mod buffers;
mod project;
mod render;

pub use backward::backward_features;
pub use buffers::{read_debug_dump, RenderBuffers, WeightEntry, WeightRecords, DEBUG_DUMP_CHANNELS};
pub use project::{project, project_geometry, project_near_pixel, ProjectedGaussian};
pub use render::{render, render_pixel, PixelSample, RenderOptions};

/// Gaussians at or in front of this camera-space depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Isotropic variance added to every projected covariance (pixels²).
pub const LOW_PASS: f64 = 0.3;
/// Contributions with smaller opacity are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Per-splat opacity cap.
pub const ALPHA_MAX: f64 = 0.99;
/// Compositing stops before transmittance would drop below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Splats with a smaller 3σ screen radius are culled.
pub const MIN_SCREEN_RADIUS: f64 = 0.5;
pub const TILE_SIZE: u32 = 16;
pub const MAX_RECORDS_PER_PIXEL: usize = 1024;

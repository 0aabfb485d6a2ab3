//! Feature-field optimization: pixel sampling, contrastive and global-feature
//! losses, regularizers and the Adam training loop. Only per-Gaussian
//! features are optimized; geometry and appearance stay frozen.

mod adam;
mod config;
mod contrastive;
mod gfl;
mod regularizers;
mod sampling;
mod trainer;

pub use adam::{adam_step, BETA1, BETA2, EPSILON};
pub use config::TrainConfig;
pub use contrastive::{contrastive_loss, ContrastiveTerms, PixelBatch};
pub use gfl::{gfl_assign, gfl_loss, gfl_loss_frozen, GflTerms};
pub use regularizers::{norm2d_loss, norm3d_loss, spatial_loss};
pub use sampling::{sample_pixels, MIN_SAMPLE_WEIGHT};
pub use trainer::{compute_global_clusters, train, TrainLogEntry, Trainer, LOG_EVERY};

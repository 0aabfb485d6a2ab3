//! Interactive segmentation of Gaussian-splat scenes.
//!
//! A pre-trained splat scene is augmented with a 24-dimensional feature per
//! Gaussian, split into a 12-dimensional coarse block and a 12-dimensional
//! fine-only block. The fine-level feature is the concatenation of both
//! blocks, so anything separated at the coarse level stays separated at the
//! fine level. Features are learned from per-view 2D segment masks
//! ([`train`]), globally clustered ([`cluster`]) and queried by clicks or
//! reference masks ([`segment`]).

pub mod cluster;
pub mod error;
pub mod imageio;
pub mod masks;
pub mod raster;
pub mod scene;
pub mod segment;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Dimension of the coarse feature block.
pub const COARSE_DIM: usize = 12;
/// Dimension of the full per-Gaussian feature (coarse block plus fine-only block).
pub const FEATURE_DIM: usize = 24;

/// Granularity level of a feature, mask or cluster set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Coarse,
    Fine,
}

impl Level {
    pub const BOTH: [Level; 2] = [Level::Coarse, Level::Fine];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Coarse => "coarse",
            Level::Fine => "fine",
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Level::Coarse),
            "fine" => Ok(Level::Fine),
            other => Err(Error::Config(format!("unknown level `{other}`"))),
        }
    }
}

/// How the fine-level feature is formed from the stored 24 values.
///
/// `Shared` is the granularity-prior layout: fine = coarse ⊕ fine_extra.
/// `Independent` drops the prior: fine = fine_extra alone, learned
/// separately from the coarse block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineLayout {
    #[default]
    Shared,
    Independent,
}

impl FineLayout {
    /// Range of the 24 stored components that make up the fine-level feature.
    pub fn fine_range(self) -> std::ops::Range<usize> {
        match self {
            FineLayout::Shared => 0..FEATURE_DIM,
            FineLayout::Independent => COARSE_DIM..FEATURE_DIM,
        }
    }

    pub fn range(self, level: Level) -> std::ops::Range<usize> {
        match level {
            Level::Coarse => 0..COARSE_DIM,
            Level::Fine => self.fine_range(),
        }
    }

    /// Norm a fine-level feature has when both blocks are unit-norm.
    pub fn fine_radius(self) -> f64 {
        match self {
            FineLayout::Shared => std::f64::consts::SQRT_2,
            FineLayout::Independent => 1.0,
        }
    }

    pub fn radius(self, level: Level) -> f64 {
        match level {
            Level::Coarse => 1.0,
            Level::Fine => self.fine_radius(),
        }
    }

    pub(crate) fn to_flags(self) -> u32 {
        match self {
            FineLayout::Shared => 0,
            FineLayout::Independent => 1,
        }
    }

    pub(crate) fn from_flags(flags: u32) -> Result<Self> {
        match flags & 1 {
            0 => Ok(FineLayout::Shared),
            _ => Ok(FineLayout::Independent),
        }
    }
}

use std::io::Write;
use std::path::Path;

use crate::{Error, FineLayout, Level, Result, COARSE_DIM, FEATURE_DIM};

/// One blend contribution: Gaussian `index` with weight α·T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightEntry {
    pub index: u32,
    pub weight: f32,
}

/// Per-pixel front-to-back lists of blend weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightRecords {
    pub(crate) starts: Vec<u32>,
    pub(crate) lens: Vec<u16>,
    pub(crate) entries: Vec<WeightEntry>,
}

impl WeightRecords {
    pub fn pixel(&self, p: usize) -> &[WeightEntry] {
        let s = self.starts[p] as usize;
        &self.entries[s..s + self.lens[p] as usize]
    }

    pub fn pixel_count(&self) -> usize {
        self.starts.len()
    }

    pub fn total_entries(&self) -> usize {
        self.entries.len()
    }
}

/// Output of one render. Pixel `p` is row-major: `p = y * width + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    pub width: u32,
    pub height: u32,
    /// Number of Gaussians in the rendered scene.
    pub gaussian_count: usize,
    pub color: Vec<[f32; 3]>,
    pub feature_coarse: Vec<[f32; COARSE_DIM]>,
    /// All 24 blended components; the first 12 equal `feature_coarse`.
    pub feature_fine: Vec<[f32; FEATURE_DIM]>,
    pub alpha_acc: Vec<f32>,
    pub weights: Option<WeightRecords>,
}

impl RenderBuffers {
    pub fn empty(width: u32, height: u32, gaussian_count: usize, record_weights: bool) -> Self {
        let n = width as usize * height as usize;
        RenderBuffers {
            width,
            height,
            gaussian_count,
            color: vec![[0.0; 3]; n],
            feature_coarse: vec![[0.0; COARSE_DIM]; n],
            feature_fine: vec![[0.0; FEATURE_DIM]; n],
            alpha_acc: vec![0.0; n],
            weights: record_weights.then(|| WeightRecords {
                starts: vec![0; n],
                lens: vec![0; n],
                entries: Vec::new(),
            }),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.alpha_acc.len()
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    /// Rendered feature of a pixel at `level` under `layout`.
    pub fn level_feature(&self, p: usize, level: Level, layout: FineLayout) -> &[f32] {
        match level {
            Level::Coarse => &self.feature_coarse[p],
            Level::Fine => &self.feature_fine[p][layout.fine_range()],
        }
    }

    /// Writes a raw float dump: magic `CGRB`, u32 height, u32 width, u32
    /// channels, then per pixel color(3), coarse(12), fine(24), alpha(1).
    pub fn write_debug_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::with_capacity(16 + self.pixel_count() * DEBUG_DUMP_CHANNELS * 4);
        out.extend_from_slice(b"CGRB");
        for v in [self.height, self.width, DEBUG_DUMP_CHANNELS as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in 0..self.pixel_count() {
            let vals = self.color[p]
                .iter()
                .chain(&self.feature_coarse[p])
                .chain(&self.feature_fine[p])
                .chain(std::iter::once(&self.alpha_acc[p]));
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }
}

pub const DEBUG_DUMP_CHANNELS: usize = 3 + COARSE_DIM + FEATURE_DIM + 1;

/// Reads a `CGRB` dump back as (height, width, channels, values).
pub fn read_debug_dump(path: impl AsRef<Path>) -> Result<(u32, u32, u32, Vec<f32>)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 || &bytes[..4] != b"CGRB" {
        return Err(Error::format("bad render dump header"));
    }
    let u = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let (h, w, c) = (u(0), u(1), u(2));
    let expect = h as usize * w as usize * c as usize;
    let body = &bytes[16..];
    if body.len() != expect * 4 {
        return Err(Error::format(format!("render dump body has {} bytes, expected {}", body.len(), expect * 4)));
    }
    let vals = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    Ok((h, w, c, vals))
}

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, FineLayout, Level, Result, COARSE_DIM, FEATURE_DIM};

pub const FEATURE_MAGIC: &[u8; 4] = b"CGFT";
pub const FEATURE_FILE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 24;

/// Per-Gaussian two-level features.
///
/// Each row holds the coarse block in `[0, 12)` and the fine-only block in
/// `[12, 24)`. The fine-level view is a slice of the same row, so it can never
/// go stale with respect to the coarse block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    rows: Vec<[f32; FEATURE_DIM]>,
    layout: FineLayout,
}

impl FeatureStore {
    pub fn zeros(n: usize, layout: FineLayout) -> Self {
        FeatureStore { rows: vec![[0.0; FEATURE_DIM]; n], layout }
    }

    pub fn from_rows(rows: Vec<[f32; FEATURE_DIM]>, layout: FineLayout) -> Self {
        FeatureStore { rows, layout }
    }

    /// Each 12-dimensional block drawn uniformly on its unit sphere.
    pub fn random(n: usize, seed: u64, layout: FineLayout) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = [0.0f32; FEATURE_DIM];
            for block in row.chunks_exact_mut(COARSE_DIM) {
                loop {
                    let v: [f64; COARSE_DIM] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 1e-8 {
                        for (o, x) in block.iter_mut().zip(v) {
                            *o = (x / norm) as f32;
                        }
                        break;
                    }
                }
            }
            rows.push(row);
        }
        FeatureStore { rows, layout }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn layout(&self) -> FineLayout {
        self.layout
    }

    pub fn rows(&self) -> &[[f32; FEATURE_DIM]] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut Vec<[f32; FEATURE_DIM]> {
        &mut self.rows
    }

    pub fn row(&self, i: usize) -> &[f32; FEATURE_DIM] {
        &self.rows[i]
    }

    pub fn coarse(&self, i: usize) -> &[f32] {
        &self.rows[i][..COARSE_DIM]
    }

    pub fn fine_extra(&self, i: usize) -> &[f32] {
        &self.rows[i][COARSE_DIM..]
    }

    /// Fine-level feature of Gaussian `i` under the store's layout.
    pub fn fine(&self, i: usize) -> &[f32] {
        &self.rows[i][self.layout.fine_range()]
    }

    pub fn level(&self, i: usize, level: Level) -> &[f32] {
        &self.rows[i][self.layout.range(level)]
    }
}

/// Features for a freshly loaded scene (granularity-prior layout).
pub fn init_features(scene: &super::GaussianScene, seed: u64) -> FeatureStore {
    FeatureStore::random(scene.len(), seed, FineLayout::Shared)
}

pub(crate) fn write_features<W: Write>(w: &mut W, store: &FeatureStore) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    for v in [
        FEATURE_FILE_VERSION,
        store.len() as u32,
        COARSE_DIM as u32,
        FEATURE_DIM as u32,
        store.layout.to_flags(),
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(store.len() * FEATURE_DIM * 4);
    for row in &store.rows {
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::format(format!("truncated while reading {what}")))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_features<R: Read>(r: &mut R) -> Result<FeatureStore> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::format("truncated feature header"))?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::format("bad feature magic (expected CGFT)"));
    }
    let version = read_u32(r, "feature version")?;
    if version != FEATURE_FILE_VERSION {
        return Err(Error::format(format!("unsupported feature file version {version}")));
    }
    let n = read_u32(r, "feature count")? as usize;
    let dc = read_u32(r, "coarse dimension")? as usize;
    let d = read_u32(r, "feature dimension")? as usize;
    let layout = FineLayout::from_flags(read_u32(r, "feature flags")?)?;
    if dc != COARSE_DIM || d != FEATURE_DIM {
        return Err(Error::format(format!(
            "feature dimensions {dc}/{d} do not match {COARSE_DIM}/{FEATURE_DIM}"
        )));
    }
    let mut buf = vec![0u8; n * FEATURE_DIM * 4];
    r.read_exact(&mut buf).map_err(|_| Error::format(format!("truncated feature rows (expected {n})")))?;
    let rows = buf
        .chunks_exact(FEATURE_DIM * 4)
        .map(|chunk| std::array::from_fn(|k| f32::from_le_bytes(chunk[4 * k..4 * k + 4].try_into().unwrap())))
        .collect();
    Ok(FeatureStore { rows, layout })
}

pub fn save_features(store: &FeatureStore, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    write_features(&mut bytes, store)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads a feature sidecar. With `scene_len`, the row count must match it.
pub fn load_features(path: impl AsRef<Path>, scene_len: Option<usize>) -> Result<FeatureStore> {
    let bytes = std::fs::read(path)?;
    let mut cursor = &bytes[..];
    let store = read_features(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::format(format!("{} trailing bytes after feature rows", cursor.len())));
    }
    if let Some(n) = scene_len {
        if store.len() != n {
            return Err(Error::format(format!("feature file has {} rows, scene has {n} Gaussians", store.len())));
        }
    }
    Ok(store)
}

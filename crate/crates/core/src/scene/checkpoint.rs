//! Checkpoint file: header, feature sidecar block, cluster block and an
//! optional optimizer-state block, in that order.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::features::{read_features, read_u32, write_features};
use super::FeatureStore;
use crate::cluster::{Cluster, GlobalClusters};
use crate::{Error, Level, Result, FEATURE_DIM};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CGCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const FLAG_OPTIMIZER: u32 = 1;

/// First and second Adam moments for every feature component.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<[f32; FEATURE_DIM]>,
    pub v: Vec<[f32; FEATURE_DIM]>,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        OptimizerState { step: 0, m: vec![[0.0; FEATURE_DIM]; n], v: vec![[0.0; FEATURE_DIM]; n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub features: FeatureStore,
    pub clusters: GlobalClusters,
    pub iteration: u64,
    pub config_digest: [u8; 32],
    pub optimizer: Option<OptimizerState>,
}

/// SHA-256 of the JSON serialization of a config.
pub fn config_digest<T: Serialize>(cfg: &T) -> [u8; 32] {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).into()
}

fn write_rows<W: Write>(w: &mut W, rows: &[[f32; FEATURE_DIM]]) -> Result<()> {
    let mut buf = Vec::with_capacity(rows.len() * FEATURE_DIM * 4);
    for r in rows {
        for v in r {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_rows<R: Read>(r: &mut R, n: usize) -> Result<Vec<[f32; FEATURE_DIM]>> {
    let mut buf = vec![0u8; n * FEATURE_DIM * 4];
    r.read_exact(&mut buf).map_err(|_| Error::format("truncated optimizer state"))?;
    Ok(buf
        .chunks_exact(FEATURE_DIM * 4)
        .map(|c| std::array::from_fn(|k| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap())))
        .collect())
}

impl Checkpoint {
    /// Fresh checkpoint for untrained features.
    pub fn initial(features: FeatureStore, config_digest: [u8; 32]) -> Self {
        Checkpoint { features, clusters: GlobalClusters::default(), iteration: 0, config_digest, optimizer: None }
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.iteration.to_le_bytes())?;
        w.write_all(&self.config_digest)?;
        let flags = if self.optimizer.is_some() { FLAG_OPTIMIZER } else { 0 };
        w.write_all(&flags.to_le_bytes())?;
        write_features(w, &self.features)?;
        let layout = self.features.layout();
        for level in Level::BOTH {
            let dim = layout.range(level).len();
            let clusters = self.clusters.level(level);
            w.write_all(&(clusters.len() as u32).to_le_bytes())?;
            for c in clusters {
                if c.representative.len() != dim {
                    return Err(Error::Contract(format!(
                        "{level} cluster {} has {} dims, layout needs {dim}",
                        c.id,
                        c.representative.len()
                    )));
                }
                w.write_all(&c.id.to_le_bytes())?;
                w.write_all(&c.member_count.to_le_bytes())?;
                for v in &c.representative {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        if let Some(opt) = &self.optimizer {
            w.write_all(&opt.step.to_le_bytes())?;
            write_rows(w, &opt.m)?;
            write_rows(w, &opt.v)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::format("truncated checkpoint header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("bad checkpoint magic (expected CGCK)"));
        }
        let version = read_u32(r, "checkpoint version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let mut it = [0u8; 8];
        r.read_exact(&mut it).map_err(|_| Error::format("truncated checkpoint header"))?;
        let mut config_digest = [0u8; 32];
        r.read_exact(&mut config_digest).map_err(|_| Error::format("truncated checkpoint header"))?;
        let flags = read_u32(r, "checkpoint flags")?;
        let features = read_features(r)?;
        let layout = features.layout();
        let mut clusters = GlobalClusters::default();
        for level in Level::BOTH {
            let dim = layout.range(level).len();
            let count = read_u32(r, "cluster count")? as usize;
            let list = clusters.level_mut(level);
            for _ in 0..count {
                let id = read_u32(r, "cluster id")?;
                let member_count = read_u32(r, "cluster member count")?;
                let mut buf = vec![0u8; dim * 4];
                r.read_exact(&mut buf).map_err(|_| Error::format("truncated cluster representative"))?;
                let representative =
                    buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                list.push(Cluster { id, member_count, representative });
            }
        }
        let optimizer = if flags & FLAG_OPTIMIZER != 0 {
            let mut st = [0u8; 8];
            r.read_exact(&mut st).map_err(|_| Error::format("truncated optimizer state"))?;
            let n = features.len();
            Some(OptimizerState { step: u64::from_le_bytes(st), m: read_rows(r, n)?, v: read_rows(r, n)? })
        } else {
            None
        };
        Ok(Checkpoint { features, clusters, iteration: u64::from_le_bytes(it), config_digest, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::new();
        self.write(&mut bytes)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut cursor = &bytes[..];
        let ck = Checkpoint::read(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::format(format!("{} trailing bytes after checkpoint", cursor.len())));
        }
        Ok(ck)
    }
}

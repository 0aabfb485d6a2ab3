use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IdMap;
use crate::{imageio, Error, Level, Result};

/// |a ∩ b| / |a ∪ b|, defined as 1 when both masks are empty.
pub fn mask_iou(pred: &[bool], gt: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!("mask sizes differ: {} vs {}", pred.len(), gt.len())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiouReport {
    /// Mean IoU over views, per object.
    pub per_object: Vec<f64>,
    pub mean: f64,
}

/// `pred[o][v]` and `gt[o][v]` are the masks of object `o` in view `v`.
pub fn evaluate_miou(pred: &[Vec<Vec<bool>>], gt: &[Vec<Vec<bool>>]) -> Result<MiouReport> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!("{} predicted objects, {} ground-truth objects", pred.len(), gt.len())));
    }
    let mut per_object = Vec::with_capacity(gt.len());
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() || g.is_empty() {
            return Err(Error::Contract(format!("{} predicted views, {} ground-truth views", p.len(), g.len())));
        }
        let sum = p.iter().zip(g).map(|(a, b)| mask_iou(a, b)).sum::<Result<f64>>()?;
        per_object.push(sum / g.len() as f64);
    }
    let mean = if per_object.is_empty() { 1.0 } else { per_object.iter().sum::<f64>() / per_object.len() as f64 };
    Ok(MiouReport { per_object, mean })
}

/// One line of the ID-map sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdMapEntry {
    /// Value stored in the PNG.
    pub value: u16,
    pub cluster_id: u32,
    pub level: Level,
    pub pixels: usize,
}

/// Writes `map` as a 16-bit PNG of dense values (0 = none) plus a JSON-lines
/// sidecar mapping values back to cluster IDs.
pub fn export_id_map(map: &IdMap, level: Level, png: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<Vec<IdMapEntry>> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &id in map.ids.iter().filter(|&&id| id != 0) {
        *counts.entry(id).or_default() += 1;
    }
    if counts.len() > u16::MAX as usize {
        return Err(Error::Contract(format!("{} distinct IDs do not fit a 16-bit map", counts.len())));
    }
    let entries: Vec<IdMapEntry> = counts
        .iter()
        .enumerate()
        .map(|(k, (&cluster_id, &pixels))| IdMapEntry { value: k as u16 + 1, cluster_id, level, pixels })
        .collect();
    let lookup: BTreeMap<u32, u16> = entries.iter().map(|e| (e.cluster_id, e.value)).collect();
    let values: Vec<u16> = map.ids.iter().map(|id| lookup.get(id).copied().unwrap_or(0)).collect();
    imageio::write_gray16(png, map.width, map.height, &values)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(sidecar)?);
    for e in &entries {
        serde_json::to_writer(&mut out, e).map_err(|e| Error::format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(entries)
}

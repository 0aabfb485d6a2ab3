//! Segment-feature pooling, global feature clustering and spatial neighbor
//! search.

mod hdbscan;
mod kdtree;

pub use hdbscan::{core_distances, hdbscan, HdbscanParams, LAMBDA_MAX};
pub use kdtree::{build_kd_index, knn, KdTree};

use rayon::prelude::*;

use crate::masks::TwoLevelMask;
use crate::raster::RenderBuffers;
use crate::{Error, FineLayout, Level, Result};

/// Segments with fewer pixels are not pooled.
pub const MIN_POOL_PIXELS: usize = 16;

/// Mean rendered feature over one segment of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSegmentFeature {
    pub level: Level,
    pub view_id: u32,
    pub segment_id: i32,
    pub mean_feature: Vec<f64>,
    pub pixel_count: usize,
}

/// A global feature candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Dense, 1-based.
    pub id: u32,
    pub member_count: u32,
    /// Normalized member mean, scaled to the level's feature radius.
    pub representative: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalClusters {
    pub coarse: Vec<Cluster>,
    pub fine: Vec<Cluster>,
}

impl GlobalClusters {
    pub fn level(&self, level: Level) -> &[Cluster] {
        match level {
            Level::Coarse => &self.coarse,
            Level::Fine => &self.fine,
        }
    }

    pub fn level_mut(&mut self, level: Level) -> &mut Vec<Cluster> {
        match level {
            Level::Coarse => &mut self.coarse,
            Level::Fine => &mut self.fine,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coarse.is_empty() && self.fine.is_empty()
    }

    pub fn get(&self, level: Level, id: u32) -> Option<&Cluster> {
        self.level(level).iter().find(|c| c.id == id)
    }
}

/// Minimum cluster size for `views` training views: max(2, ⌈0.2·V⌉).
pub fn min_cluster_size_for_views(views: usize) -> usize {
    ((views as f64 * 0.2).ceil() as usize).max(2)
}

/// Average-pools the rendered features of every segment with at least
/// [`MIN_POOL_PIXELS`] pixels, at both levels.
pub fn pool_segment_features(
    buffers: &RenderBuffers,
    mask: &TwoLevelMask,
    layout: FineLayout,
) -> Result<Vec<PooledSegmentFeature>> {
    if (buffers.width, buffers.height) != (mask.width, mask.height) {
        return Err(Error::Contract(format!(
            "render is {}x{}, mask is {}x{}",
            buffers.width, buffers.height, mask.width, mask.height
        )));
    }
    let mut out = Vec::new();
    for level in Level::BOTH {
        let ids = mask.level(level);
        let dim = layout.range(level).len();
        let mut sums: std::collections::BTreeMap<i32, (Vec<f64>, usize)> = Default::default();
        for (p, &id) in ids.iter().enumerate() {
            if id == 0 {
                continue;
            }
            let e = sums.entry(id).or_insert_with(|| (vec![0.0; dim], 0));
            for (s, &v) in e.0.iter_mut().zip(buffers.level_feature(p, level, layout)) {
                *s += v as f64;
            }
            e.1 += 1;
        }
        for (segment_id, (sum, count)) in sums {
            if count >= MIN_POOL_PIXELS {
                out.push(PooledSegmentFeature {
                    level,
                    view_id: mask.view_id,
                    segment_id,
                    mean_feature: sum.into_iter().map(|s| s / count as f64).collect(),
                    pixel_count: count,
                });
            }
        }
    }
    Ok(out)
}

/// Pools all views in parallel; `buffers[v]` must be rendered for `masks[v]`.
pub fn pool_views(buffers: &[RenderBuffers], masks: &[TwoLevelMask], layout: FineLayout) -> Result<Vec<PooledSegmentFeature>> {
    let per_view: Vec<Vec<PooledSegmentFeature>> = buffers
        .par_iter()
        .zip(masks)
        .map(|(b, m)| pool_segment_features(b, m, layout))
        .collect::<Result<_>>()?;
    Ok(per_view.into_iter().flatten().collect())
}

fn scaled_unit(v: &[f64], radius: f64) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-12 && n.is_finite()).then(|| v.iter().map(|x| x / n * radius).collect())
}

/// Clusters the pooled features of one level.
///
/// Inputs are normalized to the level radius; noise is dropped; clusters are
/// numbered 1.. by descending member count, then by their lowest
/// (view, segment) member.
pub fn cluster_level(
    pooled: &[PooledSegmentFeature],
    level: Level,
    epsilon: f64,
    min_cluster_size: usize,
    layout: FineLayout,
) -> Vec<Cluster> {
    let radius = layout.radius(level);
    let mut members: Vec<(&PooledSegmentFeature, Vec<f64>)> = pooled
        .iter()
        .filter(|p| p.level == level)
        .filter_map(|p| scaled_unit(&p.mean_feature, radius).map(|v| (p, v)))
        .collect();
    // Canonical input order keeps labels independent of caller ordering.
    members.sort_by_key(|(p, _)| (p.view_id, p.segment_id));
    let points: Vec<Vec<f64>> = members.iter().map(|m| m.1.clone()).collect();
    let labels = hdbscan(&points, &HdbscanParams::new(min_cluster_size, epsilon));
    let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
    if k == 0 {
        log::warn!("{level}: all {} pooled features are noise; no global clusters", points.len());
        return Vec::new();
    }
    let dim = points.first().map_or(0, |p| p.len());
    let mut groups: Vec<(usize, (u32, i32), Vec<f64>)> = (0..k).map(|_| (0, (u32::MAX, i32::MAX), vec![0.0; dim])).collect();
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = *l {
            let g = &mut groups[l];
            g.0 += 1;
            g.1 = g.1.min((members[i].0.view_id, members[i].0.segment_id));
            for (s, v) in g.2.iter_mut().zip(&points[i]) {
                *s += v;
            }
        }
    }
    groups.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    groups
        .into_iter()
        .enumerate()
        .map(|(i, (count, _, sum))| Cluster {
            id: i as u32 + 1,
            member_count: count as u32,
            representative: scaled_unit(&sum, radius)
                .unwrap_or_else(|| vec![0.0; dim])
                .into_iter()
                .map(|v| v as f32)
                .collect(),
        })
        .collect()
}

/// Both levels of global clusters from pooled features of `views` views.
pub fn build_global_clusters(
    pooled: &[PooledSegmentFeature],
    views: usize,
    eps_coarse: f64,
    eps_fine: f64,
    layout: FineLayout,
) -> GlobalClusters {
    let m = min_cluster_size_for_views(views);
    let (coarse, fine) = rayon::join(
        || cluster_level(pooled, Level::Coarse, eps_coarse, m, layout),
        || cluster_level(pooled, Level::Fine, eps_fine, m, layout),
    );
    GlobalClusters { coarse, fine }
}

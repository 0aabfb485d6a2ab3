//! Queries over a trained scene: click selection, label propagation from a
//! reference mask, segment-everything maps, edits and mask metrics.
//!
//! All queries compare features by cosine similarity against the global
//! cluster representatives of one level. Similarity is scale-invariant, so
//! the blend weight a pixel happens to accumulate never changes a decision.

mod edit;
mod metrics;

pub use edit::{apply_edit, EditOp};
pub use metrics::{evaluate_miou, export_id_map, mask_iou, IdMapEntry, MiouReport};

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, GlobalClusters};
use crate::raster::{project_near_pixel, render, render_pixel, PixelSample, RenderBuffers, RenderOptions};
use crate::scene::{Camera, FeatureStore, GaussianScene};
use crate::{Error, FineLayout, Level, Result};

/// Thresholds used by the engine. The background and abstention gates are
/// policy rather than part of the method, hence configurable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnginePolicy {
    /// A Gaussian (or propagated pixel) belongs to a cluster above this cosine.
    pub select_threshold: f32,
    /// Pixels with less accumulated opacity are background.
    pub min_opacity: f32,
    /// Best-cluster similarity below this abstains.
    pub min_similarity: f32,
    /// Fraction of reference-mask pixels a cluster must match to be chosen.
    pub vote_fraction: f32,
}

impl Default for EnginePolicy {
    fn default() -> Self {
        EnginePolicy { select_threshold: 0.9, min_opacity: 0.5, min_similarity: 0.5, vote_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSource {
    Click { x: u32, y: u32 },
    ReferenceMask { pixels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub level: Level,
    pub cluster_ids: BTreeSet<u32>,
    pub gaussian_ids: BTreeSet<u32>,
    pub source: SelectionSource,
}

impl Selection {
    pub fn is_empty(&self) -> bool {
        self.gaussian_ids.is_empty()
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())) as f32
}

/// Most similar cluster to `feature` (ties go to the lower ID).
pub fn best_cluster(feature: &[f32], clusters: &[Cluster]) -> Option<(u32, f32)> {
    let mut best: Option<(u32, f32)> = None;
    for c in clusters {
        let s = cosine(feature, &c.representative);
        match best {
            Some((id, b)) if s < b || (s == b && c.id > id) => {}
            _ => best = Some((c.id, s)),
        }
    }
    best
}

fn level_clusters(clusters: &GlobalClusters, level: Level) -> Result<&[Cluster]> {
    let cs = clusters.level(level);
    if cs.is_empty() {
        return Err(Error::Precondition(format!("checkpoint has no {level} clusters")));
    }
    Ok(cs)
}

fn check_pixel(camera: &Camera, x: u32, y: u32) -> Result<()> {
    if x >= camera.width || y >= camera.height {
        return Err(Error::Precondition(format!(
            "pixel ({x}, {y}) outside a {}x{} view",
            camera.width, camera.height
        )));
    }
    Ok(())
}

/// Renders a single pixel on demand, projecting only nearby Gaussians.
pub fn click_sample(scene: &GaussianScene, features: &FeatureStore, camera: &Camera, x: u32, y: u32) -> Result<PixelSample> {
    camera.validate()?;
    check_pixel(camera, x, y)?;
    if features.len() != scene.len() {
        return Err(Error::Contract(format!("{} feature rows for {} Gaussians", features.len(), scene.len())));
    }
    let near = project_near_pixel(scene, camera, x, y);
    Ok(render_pixel(&near, features, x, y))
}

/// Gaussians whose level feature has cosine > `threshold` to any of `clusters`.
pub fn select_gaussians(features: &FeatureStore, clusters: &[&Cluster], level: Level, threshold: f32) -> BTreeSet<u32> {
    let hits: Vec<u32> = (0..features.len())
        .into_par_iter()
        .filter(|&i| {
            let f = features.level(i, level);
            clusters.iter().any(|c| cosine(f, &c.representative) > threshold)
        })
        .map(|i| i as u32)
        .collect();
    hits.into_iter().collect()
}

/// Per-Gaussian argmax cluster ID, or `None` below `threshold`.
pub fn assign_gaussians(features: &FeatureStore, clusters: &[Cluster], level: Level, threshold: f32) -> Vec<Option<u32>> {
    (0..features.len())
        .into_par_iter()
        .map(|i| best_cluster(features.level(i, level), clusters).filter(|&(_, s)| s >= threshold).map(|(id, _)| id))
        .collect()
}

/// Selects the object under pixel (`x`, `y`): the feature there is rendered on
/// demand, matched to its most similar cluster, and every Gaussian close to
/// that cluster is returned.
#[allow(clippy::too_many_arguments)]
pub fn click_select(
    scene: &GaussianScene,
    features: &FeatureStore,
    clusters: &GlobalClusters,
    camera: &Camera,
    x: u32,
    y: u32,
    level: Level,
    policy: &EnginePolicy,
) -> Result<Selection> {
    let candidates = level_clusters(clusters, level)?;
    let sample = click_sample(scene, features, camera, x, y)?;
    if sample.alpha < policy.min_opacity {
        return Err(Error::BackgroundClick { opacity: sample.alpha });
    }
    let range = features.layout().range(level);
    let (id, sim) = best_cluster(&sample.feature[range], candidates).expect("nonempty clusters");
    if sim < policy.min_similarity {
        return Err(Error::NoConfidentMatch { similarity: sim });
    }
    let chosen = clusters.get(level, id).expect("cluster exists");
    Ok(Selection {
        level,
        cluster_ids: BTreeSet::from([id]),
        gaussian_ids: select_gaussians(features, &[chosen], level, policy.select_threshold),
        source: SelectionSource::Click { x, y },
    })
}

/// Result of [`propagate_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub cluster_ids: BTreeSet<u32>,
    /// One row-major mask per target camera.
    pub masks: Vec<Vec<bool>>,
}

/// Clusters picked by voting over the reference-mask pixels: a cluster is
/// chosen when it matches at least `vote_fraction` of the pixels. If none
/// does, the cluster most often best-matching wins.
pub fn vote_clusters(
    buffers: &RenderBuffers,
    mask: &[bool],
    clusters: &[Cluster],
    layout: FineLayout,
    level: Level,
    policy: &EnginePolicy,
) -> Result<BTreeSet<u32>> {
    if mask.len() != buffers.pixel_count() {
        return Err(Error::Contract(format!("mask has {} pixels, view has {}", mask.len(), buffers.pixel_count())));
    }
    let pixels: Vec<usize> = (0..mask.len()).filter(|&p| mask[p]).collect();
    if pixels.is_empty() {
        return Err(Error::Precondition("reference mask is empty".into()));
    }
    let mut votes = vec![0usize; clusters.len()];
    let mut wins = vec![0usize; clusters.len()];
    for &p in &pixels {
        let f = buffers.level_feature(p, level, layout);
        let mut best = (usize::MAX, f32::NEG_INFINITY);
        for (k, c) in clusters.iter().enumerate() {
            let s = cosine(f, &c.representative);
            if s > policy.select_threshold {
                votes[k] += 1;
            }
            if s > best.1 {
                best = (k, s);
            }
        }
        if best.0 != usize::MAX && best.1 >= policy.min_similarity {
            wins[best.0] += 1;
        }
    }
    let need = policy.vote_fraction as f64 * pixels.len() as f64;
    let mut chosen: BTreeSet<u32> =
        clusters.iter().zip(&votes).filter(|(_, &v)| v as f64 >= need && v > 0).map(|(c, _)| c.id).collect();
    if chosen.is_empty() {
        if let Some((k, _)) = wins.iter().enumerate().filter(|(_, &w)| w > 0).max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))) {
            chosen.insert(clusters[k].id);
        }
    }
    Ok(chosen)
}

/// Pixels of a rendered view matching any of `ids` above the select threshold.
pub fn match_pixels(
    buffers: &RenderBuffers,
    clusters: &[Cluster],
    ids: &BTreeSet<u32>,
    layout: FineLayout,
    level: Level,
    policy: &EnginePolicy,
) -> Vec<bool> {
    let targets: Vec<&Cluster> = clusters.iter().filter(|c| ids.contains(&c.id)).collect();
    (0..buffers.pixel_count())
        .into_par_iter()
        .map(|p| {
            if buffers.alpha_acc[p] < policy.min_opacity {
                return false;
            }
            let f = buffers.level_feature(p, level, layout);
            targets.iter().any(|c| cosine(f, &c.representative) > policy.select_threshold)
        })
        .collect()
}

/// Transfers a reference-view mask to other views through the global clusters.
#[allow(clippy::too_many_arguments)]
pub fn propagate_labels(
    scene: &GaussianScene,
    features: &FeatureStore,
    clusters: &GlobalClusters,
    reference: &Camera,
    reference_mask: &[bool],
    targets: &[Camera],
    level: Level,
    policy: &EnginePolicy,
) -> Result<Propagation> {
    let clusters = level_clusters(clusters, level)?;
    let layout = features.layout();
    if !reference_mask.iter().any(|&m| m) {
        return Err(Error::Precondition("reference mask is empty".into()));
    }
    let ref_buf = render(scene, features, reference, RenderOptions::default())?;
    let ids = vote_clusters(&ref_buf, reference_mask, clusters, layout, level, policy)?;
    let masks = targets
        .iter()
        .map(|cam| {
            let buf = render(scene, features, cam, RenderOptions::default())?;
            Ok(match_pixels(&buf, clusters, &ids, layout, level, policy))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Propagation { cluster_ids: ids, masks })
}

/// A view with its truth label map (0 = unlabeled, otherwise a label).
pub struct LabeledView<'a> {
    pub camera: &'a Camera,
    pub labels: &'a [i32],
}

/// Propagation accuracy: every label present in the reference view is
/// propagated to `targets` and scored against their label maps. Returns the
/// labels in ascending order alongside the report (`per_object[k]` belongs
/// to `labels[k]`). Each view is rendered once.
pub fn propagation_miou(
    scene: &GaussianScene,
    features: &FeatureStore,
    clusters: &GlobalClusters,
    reference: LabeledView<'_>,
    targets: &[LabeledView<'_>],
    level: Level,
    policy: &EnginePolicy,
) -> Result<(Vec<i32>, MiouReport)> {
    let candidates = level_clusters(clusters, level)?;
    let layout = features.layout();
    let check = |v: &LabeledView<'_>| {
        if v.labels.len() != v.camera.pixel_count() {
            return Err(Error::Contract(format!("label map has {} pixels, camera has {}", v.labels.len(), v.camera.pixel_count())));
        }
        Ok(())
    };
    check(&reference)?;
    if targets.is_empty() {
        return Err(Error::Precondition("no target views".into()));
    }
    targets.iter().try_for_each(check)?;
    let labels: Vec<i32> = reference.labels.iter().filter(|&&l| l != 0).copied().collect::<BTreeSet<_>>().into_iter().collect();
    if labels.is_empty() {
        return Err(Error::Precondition("reference view has no labeled pixels".into()));
    }
    let ref_buf = render(scene, features, reference.camera, RenderOptions::default())?;
    let chosen = labels
        .iter()
        .map(|&l| {
            let mask: Vec<bool> = reference.labels.iter().map(|&v| v == l).collect();
            vote_clusters(&ref_buf, &mask, candidates, layout, level, policy)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pred = vec![Vec::with_capacity(targets.len()); labels.len()];
    let mut gt = vec![Vec::with_capacity(targets.len()); labels.len()];
    for t in targets {
        let buf = render(scene, features, t.camera, RenderOptions::default())?;
        for (k, &l) in labels.iter().enumerate() {
            pred[k].push(match_pixels(&buf, candidates, &chosen[k], layout, level, policy));
            gt[k].push(t.labels.iter().map(|&v| v == l).collect());
        }
    }
    Ok((labels, evaluate_miou(&pred, &gt)?))
}

/// Per-pixel cluster IDs (0 = background or abstained).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<u32>,
}

/// Segment-everything on already rendered buffers.
pub fn segment_buffers(
    buffers: &RenderBuffers,
    clusters: &[Cluster],
    layout: FineLayout,
    level: Level,
    policy: &EnginePolicy,
) -> IdMap {
    let ids = (0..buffers.pixel_count())
        .into_par_iter()
        .map(|p| {
            if buffers.alpha_acc[p] < policy.min_opacity {
                return 0;
            }
            match best_cluster(buffers.level_feature(p, level, layout), clusters) {
                Some((id, s)) if s >= policy.min_similarity => id,
                _ => 0,
            }
        })
        .collect();
    IdMap { width: buffers.width, height: buffers.height, ids }
}

/// Assigns every pixel of a view its most similar global cluster.
pub fn segment_everything(
    scene: &GaussianScene,
    features: &FeatureStore,
    clusters: &GlobalClusters,
    camera: &Camera,
    level: Level,
    policy: &EnginePolicy,
) -> Result<IdMap> {
    let buf = render(scene, features, camera, RenderOptions::default())?;
    Ok(segment_buffers(&buf, clusters.level(level), features.layout(), level, policy))
}

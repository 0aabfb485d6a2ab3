use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use crate::raster::{project, RenderBuffers, WeightEntry, WeightRecords, ALPHA_MAX, ALPHA_MIN, TRANSMITTANCE_MIN};
use crate::scene::{Camera, FeatureStore, GaussianScene};
use crate::{Error, Result, COARSE_DIM, FEATURE_DIM};

/// Reference renderer: every projected Gaussian is evaluated at every pixel in
/// one global (depth, index) order, with f64 accumulation and no tiling or
/// screen-space footprint culling. Compositing rules (opacity cap and cutoff,
/// stopping before transmittance falls below its floor) match the production
/// renderer.
pub fn brute_force_render(scene: &GaussianScene, features: &FeatureStore, camera: &Camera) -> Result<RenderBuffers> {
    camera.validate()?;
    if features.len() != scene.len() {
        return Err(Error::Contract("feature rows do not match the scene".into()));
    }
    let mut projected = project(scene, camera);
    projected.sort_by(|a, b| a.order_key().partial_cmp(&b.order_key()).unwrap());
    // Beyond this Mahalanobis radius a splat's opacity is surely below the
    // cutoff; the margin keeps borderline pixels on the exact path.
    let q_cut: Vec<f64> = projected.iter().map(|g| 2.0 * (g.opacity / ALPHA_MIN).max(1.0).ln() + 1e-6).collect();
    let (w, h) = (camera.width, camera.height);
    let mut buf = RenderBuffers::empty(w, h, scene.len(), true);
    let rows: Vec<Vec<([f32; 3], [f32; FEATURE_DIM], f32, Vec<WeightEntry>)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut t = 1.0f64;
                    let mut color = [0.0f64; 3];
                    let mut feat = [0.0f64; FEATURE_DIM];
                    let mut acc = 0.0f64;
                    let mut entries = Vec::new();
                    for (g, &cut) in projected.iter().zip(&q_cut) {
                        let dx = px - g.mean2d[0];
                        let dy = py - g.mean2d[1];
                        let q = g.conic[0] * dx * dx + 2.0 * g.conic[1] * dx * dy + g.conic[2] * dy * dy;
                        if q > cut {
                            continue;
                        }
                        let alpha = (g.opacity * (-0.5 * q).exp()).min(ALPHA_MAX);
                        if alpha < ALPHA_MIN {
                            continue;
                        }
                        if t * (1.0 - alpha) < TRANSMITTANCE_MIN {
                            break;
                        }
                        let wgt = alpha * t;
                        let f = features.row(g.source_index as usize);
                        for c in 0..3 {
                            color[c] += g.color[c] as f64 * wgt;
                        }
                        for k in 0..FEATURE_DIM {
                            feat[k] += f[k] as f64 * wgt;
                        }
                        acc += wgt;
                        entries.push(WeightEntry { index: g.source_index, weight: wgt as f32 });
                        t *= 1.0 - alpha;
                    }
                    (color.map(|v| v as f32), feat.map(|v| v as f32), acc as f32, entries)
                })
                .collect()
        })
        .collect();
    let mut starts = Vec::with_capacity(buf.pixel_count());
    let mut lens = Vec::with_capacity(buf.pixel_count());
    let mut entries = Vec::new();
    for (p, (color, feat, acc, e)) in rows.into_iter().flatten().enumerate() {
        starts.push(entries.len() as u32);
        lens.push(e.len() as u16);
        entries.extend(e);
        buf.color[p] = color;
        buf.feature_fine[p] = feat;
        buf.feature_coarse[p].copy_from_slice(&feat[..COARSE_DIM]);
        buf.alpha_acc[p] = acc;
    }
    buf.weights = Some(WeightRecords { starts, lens, entries });
    Ok(buf)
}

/// |A ∩ B| / |A ∪ B|; two empty sets score 1.
pub fn set_iou(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Accuracy and per-label IoU of predicted Gaussian labels against truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelAccuracy {
    pub accuracy: f64,
    /// IoU per ground-truth label, indexed by label.
    pub iou: Vec<f64>,
}

/// Scores arbitrary predicted labels (e.g. cluster IDs) against ground-truth
/// labels `0..labels`. Predicted labels are matched one-to-one to truth labels
/// greedily by overlap; unmatched or missing predictions count as wrong.
pub fn gaussian_accuracy(pred: &[Option<u32>], truth: &[usize], labels: usize) -> LabelAccuracy {
    assert_eq!(pred.len(), truth.len(), "prediction and truth lengths differ");
    let mut overlap: HashMap<(u32, usize), usize> = HashMap::new();
    for (p, &t) in pred.iter().zip(truth) {
        if let Some(p) = p {
            *overlap.entry((*p, t)).or_default() += 1;
        }
    }
    let mut pairs: Vec<((u32, usize), usize)> = overlap.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut matched: HashMap<u32, usize> = HashMap::new();
    let mut taken = vec![false; labels];
    for ((p, t), _) in pairs {
        if !matched.contains_key(&p) && t < labels && !taken[t] {
            matched.insert(p, t);
            taken[t] = true;
        }
    }
    let mapped: Vec<Option<usize>> = pred.iter().map(|p| p.and_then(|p| matched.get(&p).copied())).collect();
    let correct = mapped.iter().zip(truth).filter(|(m, &t)| **m == Some(t)).count();
    let iou = (0..labels)
        .map(|l| {
            let a: BTreeSet<u32> = (0..truth.len()).filter(|&i| truth[i] == l).map(|i| i as u32).collect();
            let b: BTreeSet<u32> = (0..truth.len()).filter(|&i| mapped[i] == Some(l)).map(|i| i as u32).collect();
            set_iou(&a, &b)
        })
        .collect();
    LabelAccuracy { accuracy: if truth.is_empty() { 1.0 } else { correct as f64 / truth.len() as f64 }, iou }
}

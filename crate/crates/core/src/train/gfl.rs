use rayon::prelude::*;

use super::contrastive::{dot, norm};
use super::TrainConfig;
use crate::cluster::GlobalClusters;
use crate::scene::FeatureStore;
use crate::{Level, FEATURE_DIM};

/// Unweighted global-feature terms (both levels summed).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GflTerms {
    pub pos: f64,
    pub neg: f64,
}

/// Most similar cluster (position in the level list) per Gaussian and level;
/// `None` when the level has no clusters or the feature is zero.
pub fn gfl_assign(features: &FeatureStore, clusters: &GlobalClusters) -> Vec<[Option<usize>; 2]> {
    let layout = features.layout();
    let reps: Vec<Vec<Vec<f64>>> = Level::BOTH.iter().map(|&l| unit_reps(clusters, l)).collect();
    (0..features.len())
        .into_par_iter()
        .map(|i| {
            let mut out = [None; 2];
            for (li, &level) in Level::BOTH.iter().enumerate() {
                let f: Vec<f64> = features.row(i)[layout.range(level)].iter().map(|&v| v as f64).collect();
                if norm(&f) == 0.0 {
                    continue;
                }
                let mut best: Option<(usize, f64)> = None;
                for (c, r) in reps[li].iter().enumerate() {
                    let s = dot(&f, r);
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((c, s));
                    }
                }
                out[li] = best.map(|b| b.0);
            }
            out
        })
        .collect()
}

fn unit_reps(clusters: &GlobalClusters, level: Level) -> Vec<Vec<f64>> {
    clusters
        .level(level)
        .iter()
        .map(|c| {
            let v: Vec<f64> = c.representative.iter().map(|&x| x as f64).collect();
            let n = norm(&v);
            v.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }).collect()
        })
        .collect()
}

/// Global-feature loss with a fixed assignment (from [`gfl_assign`]) and its
/// gradient with respect to the per-Gaussian features.
pub fn gfl_loss_frozen(
    features: &FeatureStore,
    clusters: &GlobalClusters,
    assignment: &[[Option<usize>; 2]],
    cfg: &TrainConfig,
) -> (GflTerms, Vec<[f64; FEATURE_DIM]>) {
    let layout = features.layout();
    let n = features.len();
    let mut grads = vec![[0.0; FEATURE_DIM]; n];
    let mut terms = GflTerms::default();
    if n == 0 {
        return (terms, grads);
    }
    let inv_n = 1.0 / n as f64;
    for (li, &level) in Level::BOTH.iter().enumerate() {
        let reps = unit_reps(clusters, level);
        if reps.is_empty() {
            continue;
        }
        let range = layout.range(level);
        let inv_c = 1.0 / reps.len() as f64;
        let tau = cfg.tau(level);
        let parts: Vec<(f64, f64)> = grads
            .par_iter_mut()
            .enumerate()
            .map(|(i, g)| {
                let Some(ci) = assignment[i][li] else { return (0.0, 0.0) };
                let f: Vec<f64> = features.row(i)[range.clone()].iter().map(|&v| v as f64).collect();
                let fnorm = norm(&f);
                if fnorm == 0.0 {
                    return (0.0, 0.0);
                }
                let u: Vec<f64> = f.iter().map(|x| x / fnorm).collect();
                let mut add = |r: &[f64], s: f64, w: f64| {
                    for (k, d) in range.clone().enumerate() {
                        g[d] += w * (r[k] - s * u[k]) / fnorm;
                    }
                };
                let (mut pos, mut neg) = (0.0, 0.0);
                for (c, r) in reps.iter().enumerate() {
                    let s = dot(&u, r);
                    if c == ci {
                        if s > cfg.tau_g {
                            pos -= s;
                            add(r, s, -inv_n);
                        }
                    } else if s > tau {
                        neg += inv_c * s;
                        add(r, s, inv_n * inv_c);
                    }
                }
                (pos, neg)
            })
            .collect();
        for (p, q) in parts {
            terms.pos += p * inv_n;
            terms.neg += q * inv_n;
        }
    }
    (terms, grads)
}

/// Global-feature loss with the assignment recomputed from current features.
pub fn gfl_loss(features: &FeatureStore, clusters: &GlobalClusters, cfg: &TrainConfig) -> (GflTerms, Vec<[f64; FEATURE_DIM]>) {
    for level in Level::BOTH {
        if clusters.level(level).is_empty() {
            log::warn!("no {level} global clusters; skipping that level of the global-feature loss");
        }
    }
    let assignment = gfl_assign(features, clusters);
    gfl_loss_frozen(features, clusters, &assignment, cfg)
}

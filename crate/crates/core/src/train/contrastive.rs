use std::collections::HashMap;

use rayon::prelude::*;

use super::TrainConfig;
use crate::{FineLayout, Level, COARSE_DIM, FEATURE_DIM};

/// Rendered features and mask IDs of the sampled pixels of one view.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PixelBatch {
    pub features: Vec<[f64; FEATURE_DIM]>,
    pub coarse_ids: Vec<i32>,
    pub fine_ids: Vec<i32>,
}

impl PixelBatch {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn ids(&self, level: Level) -> &[i32] {
        match level {
            Level::Coarse => &self.coarse_ids,
            Level::Fine => &self.fine_ids,
        }
    }
}

/// Unweighted positive and negative contrastive terms (both levels summed).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ContrastiveTerms {
    pub pos: f64,
    pub neg: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit vector and inverse norm; zero vectors stay zero (zero subgradient).
fn unit(v: &[f64]) -> (Vec<f64>, f64) {
    let n = norm(v);
    if n > 0.0 {
        (v.iter().map(|x| x / n).collect(), 1.0 / n)
    } else {
        (vec![0.0; v.len()], 0.0)
    }
}

/// Cosine-similarity contrastive loss over all ordered pixel pairs of the
/// batch, normalized by |P|², and its gradient with respect to every rendered
/// feature.
///
/// Same-ID pairs (self pairs included) add −S; different-ID pairs add S when
/// S exceeds the level margin. For fine-level negatives under the shared
/// layout the coarse block is held constant, so those pairs put no gradient
/// on components 0..12.
pub fn contrastive_loss(
    batch: &PixelBatch,
    layout: FineLayout,
    cfg: &TrainConfig,
) -> (ContrastiveTerms, Vec<[f64; FEATURE_DIM]>) {
    let n = batch.len();
    let mut grads = vec![[0.0; FEATURE_DIM]; n];
    let mut terms = ContrastiveTerms::default();
    if n == 0 {
        return (terms, grads);
    }
    let scale = 1.0 / (n as f64 * n as f64);
    for level in Level::BOTH {
        let range = layout.range(level);
        let ids = batch.ids(level);
        let units: Vec<(Vec<f64>, f64)> = batch.features.par_iter().map(|f| unit(&f[range.clone()])).collect();
        let stop_coarse = level == Level::Fine && layout == FineLayout::Shared;
        let tau = cfg.tau(level);

        // Positive pairs via per-segment sums of unit features.
        let mut seg_sum: HashMap<i32, Vec<f64>> = HashMap::new();
        for (p, (u, _)) in units.iter().enumerate() {
            let s = seg_sum.entry(ids[p]).or_insert_with(|| vec![0.0; range.len()]);
            for (a, b) in s.iter_mut().zip(u) {
                *a += b;
            }
        }
        let rows: Vec<(f64, f64)> = grads
            .par_iter_mut()
            .enumerate()
            .map(|(p, g)| {
                let (u, inv) = &units[p];
                // Other pixels of the same segment; the self pair is the constant 1.
                let s: Vec<f64> = seg_sum[&ids[p]].iter().zip(u).map(|(a, b)| a - b).collect();
                let own = if *inv > 0.0 { 1.0 } else { 0.0 };
                let sp = dot(u, &s) + own;
                for (k, d) in range.clone().enumerate() {
                    g[d] += -2.0 * scale * (s[k] - (sp - own) * u[k]) * inv;
                }
                let mut neg = 0.0;
                let neg_w = 2.0 * scale * cfg.lambda_neg_cont;
                for (q, (v, _)) in units.iter().enumerate() {
                    if ids[q] == ids[p] {
                        continue;
                    }
                    let sim = dot(u, v);
                    if sim > tau {
                        neg += sim;
                        for (k, d) in range.clone().enumerate() {
                            if stop_coarse && d < COARSE_DIM {
                                continue;
                            }
                            g[d] += neg_w * (v[k] - sim * u[k]) * inv;
                        }
                    }
                }
                (-sp, neg)
            })
            .collect();
        for (pos, neg) in rows {
            terms.pos += pos * scale;
            terms.neg += neg * scale;
        }
    }
    (terms, grads)
}

use rayon::prelude::*;

use super::contrastive::{dot, norm};
use crate::raster::RenderBuffers;
use crate::scene::FeatureStore;
use crate::{FineLayout, Level, COARSE_DIM, FEATURE_DIM};

/// Mean over Gaussians of (‖coarse‖ − 1)² + (‖fine-only‖ − 1)², with gradient.
pub fn norm3d_loss(features: &FeatureStore) -> (f64, Vec<[f64; FEATURE_DIM]>) {
    let n = features.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let inv_n = 1.0 / n as f64;
    let (losses, grads): (Vec<f64>, Vec<[f64; FEATURE_DIM]>) = features
        .rows()
        .par_iter()
        .map(|row| {
            let mut g = [0.0; FEATURE_DIM];
            let mut loss = 0.0;
            for block in [0..COARSE_DIM, COARSE_DIM..FEATURE_DIM] {
                let v: Vec<f64> = row[block.clone()].iter().map(|&x| x as f64).collect();
                let r = norm(&v);
                loss += (r - 1.0) * (r - 1.0);
                if r > 0.0 {
                    for (k, d) in block.enumerate() {
                        g[d] = 2.0 * (r - 1.0) * v[k] / r * inv_n;
                    }
                }
            }
            (loss, g)
        })
        .unzip();
    (losses.iter().sum::<f64>() * inv_n, grads)
}

/// Mean over all H·W pixels of Σ_l (‖F^l_p‖ − r^l)², with the gradient for
/// each pixel whose rendered feature is nonzero (pixel index, ∂L/∂F_p).
pub fn norm2d_loss(buffers: &RenderBuffers, layout: FineLayout) -> (f64, Vec<(usize, [f64; FEATURE_DIM])>) {
    let hw = buffers.pixel_count();
    if hw == 0 {
        return (0.0, Vec::new());
    }
    let inv = 1.0 / hw as f64;
    let per_pixel: Vec<(f64, Option<(usize, [f64; FEATURE_DIM])>)> = (0..hw)
        .into_par_iter()
        .map(|p| {
            let f = buffers.feature_fine[p].map(|v| v as f64);
            let mut g = [0.0; FEATURE_DIM];
            let mut loss = 0.0;
            let mut any = false;
            for level in Level::BOTH {
                let range = layout.range(level);
                let r = layout.radius(level);
                let m = norm(&f[range.clone()]);
                loss += (m - r) * (m - r);
                if m > 0.0 {
                    any = true;
                    for d in range {
                        g[d] += 2.0 * (m - r) * f[d] / m * inv;
                    }
                }
            }
            (loss, any.then_some((p, g)))
        })
        .collect();
    let total = per_pixel.iter().map(|x| x.0).sum::<f64>() * inv;
    (total, per_pixel.into_iter().filter_map(|x| x.1).collect())
}

/// −mean over (i, k) pairs of the cosine of the full 24-dim features, with
/// gradient on both ends of every pair.
pub fn spatial_loss(features: &FeatureStore, samples: &[(usize, &[u32])]) -> (f64, Vec<[f64; FEATURE_DIM]>) {
    let n = features.len();
    let mut grads = vec![[0.0; FEATURE_DIM]; n];
    let pairs: usize = samples.iter().map(|s| s.1.len()).sum();
    if pairs == 0 {
        return (0.0, grads);
    }
    let w = -1.0 / pairs as f64;
    let row = |i: usize| features.row(i).map(|v| v as f64);
    let mut loss = 0.0;
    for &(i, neigh) in samples {
        let a = row(i);
        let na = norm(&a);
        for &k in neigh {
            let b = row(k as usize);
            let nb = norm(&b);
            if na == 0.0 || nb == 0.0 {
                continue;
            }
            let s = dot(&a, &b) / (na * nb);
            loss += w * s;
            for d in 0..FEATURE_DIM {
                grads[i][d] += w * (b[d] / (na * nb) - s * a[d] / (na * na));
                grads[k as usize][d] += w * (a[d] / (na * nb) - s * b[d] / (nb * nb));
            }
        }
    }
    (loss, grads)
}

use rayon::prelude::*;

use super::buffers::RenderBuffers;
use crate::{Error, Result, FEATURE_DIM};

/// Pulls per-pixel feature gradients back onto Gaussians.
///
/// The rendered feature is linear in the per-Gaussian features, so
/// ∂L/∂f_i = Σ_p w_ip · ∂L/∂F_p with the recorded weights. `pixel_grads`
/// holds (pixel index, ∂L/∂F_p) pairs; pixels may repeat.
///
/// Partial sums are combined in a fixed order so the result does not depend
/// on the thread count.
pub fn backward_features(
    buffers: &RenderBuffers,
    pixel_grads: &[(usize, [f64; FEATURE_DIM])],
) -> Result<Vec<[f64; FEATURE_DIM]>> {
    let records = buffers
        .weights
        .as_ref()
        .ok_or_else(|| Error::Contract("backward pass needs a render with recorded weights".into()))?;
    let n = buffers.gaussian_count;
    for &(p, _) in pixel_grads {
        if p >= records.pixel_count() {
            return Err(Error::Contract(format!("pixel {p} outside a {}-pixel render", records.pixel_count())));
        }
    }
    let touched: usize = pixel_grads.iter().map(|&(p, _)| records.pixel(p).len()).sum();
    // Dense partial accumulators only pay off when there is enough work per chunk.
    let chunks = (touched / (2 * n.max(1))).clamp(1, 8);
    let chunk_len = pixel_grads.len().div_ceil(chunks).max(1);
    let accumulate = |part: &[(usize, [f64; FEATURE_DIM])]| {
        let mut acc = vec![[0.0f64; FEATURE_DIM]; n];
        for (p, g) in part {
            for e in records.pixel(*p) {
                let w = e.weight as f64;
                let a = &mut acc[e.index as usize];
                for k in 0..FEATURE_DIM {
                    a[k] += w * g[k];
                }
            }
        }
        acc
    };
    let mut parts: Vec<Vec<[f64; FEATURE_DIM]>> = pixel_grads.par_chunks(chunk_len).map(accumulate).collect();
    let mut total = if parts.is_empty() { vec![[0.0; FEATURE_DIM]; n] } else { parts.remove(0) };
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            for k in 0..FEATURE_DIM {
                t[k] += v[k];
            }
        }
    }
    Ok(total)
}

use rayon::prelude::*;

use super::buffers::{RenderBuffers, WeightEntry, WeightRecords};
use super::project::{project, ProjectedGaussian};
use super::{ALPHA_MAX, ALPHA_MIN, MAX_RECORDS_PER_PIXEL, TILE_SIZE, TRANSMITTANCE_MIN};
use crate::scene::{Camera, FeatureStore, GaussianScene};
use crate::{Error, Result, COARSE_DIM, FEATURE_DIM};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderOptions {
    /// Keep per-pixel blend weights for [`super::backward_features`].
    pub record_weights: bool,
}

struct Blend {
    color: [f64; 3],
    feature: [f64; FEATURE_DIM],
    alpha: f64,
}

/// Front-to-back compositing of one pixel over depth-ordered candidates.
#[inline]
fn blend_pixel<'a>(
    x: f64,
    y: f64,
    ordered: impl Iterator<Item = &'a ProjectedGaussian>,
    features: &[[f32; FEATURE_DIM]],
    mut on_weight: impl FnMut(u32, f64),
) -> Blend {
    let mut out = Blend { color: [0.0; 3], feature: [0.0; FEATURE_DIM], alpha: 0.0 };
    let mut t = 1.0f64;
    for g in ordered {
        if (x - g.mean2d[0]).abs() > g.extent || (y - g.mean2d[1]).abs() > g.extent {
            continue;
        }
        let alpha = g.alpha_at(x, y).min(ALPHA_MAX);
        if alpha < ALPHA_MIN {
            continue;
        }
        let next_t = t * (1.0 - alpha);
        if next_t < TRANSMITTANCE_MIN {
            break;
        }
        let w = alpha * t;
        for c in 0..3 {
            out.color[c] += g.color[c] as f64 * w;
        }
        let f = &features[g.source_index as usize];
        for k in 0..FEATURE_DIM {
            out.feature[k] += f[k] as f64 * w;
        }
        out.alpha += w;
        on_weight(g.source_index, w);
        t = next_t;
    }
    out
}

struct TileOut {
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
    color: Vec<[f32; 3]>,
    feature: Vec<[f32; FEATURE_DIM]>,
    alpha: Vec<f32>,
    lens: Vec<u16>,
    entries: Vec<WeightEntry>,
}

/// Renders color and both feature levels in one pass.
///
/// Gaussians are globally sorted by (depth, source index) and binned into
/// 16×16 tiles, so every tile list is depth-ordered.
pub fn render(
    scene: &GaussianScene,
    features: &FeatureStore,
    camera: &Camera,
    opts: RenderOptions,
) -> Result<RenderBuffers> {
    camera.validate()?;
    if features.len() != scene.len() {
        return Err(Error::Contract(format!(
            "{} feature rows for {} Gaussians",
            features.len(),
            scene.len()
        )));
    }
    let (width, height) = (camera.width, camera.height);
    let mut projected = project(scene, camera);
    projected.sort_unstable_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));

    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (k, g) in projected.iter().enumerate() {
        // Pixels whose centers fall inside the extent square.
        let range = |m: f64, size: u32| -> Option<(u32, u32)> {
            let lo = (m - g.extent - 0.5).ceil().max(0.0);
            let hi = (m + g.extent - 0.5).floor().min(size as f64 - 1.0);
            (lo <= hi).then_some((lo as u32, hi as u32))
        };
        let (Some((x0, x1)), Some((y0, y1))) = (range(g.mean2d[0], width), range(g.mean2d[1], height)) else {
            continue;
        };
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                bins[(ty * tiles_x + tx) as usize].push(k as u32);
            }
        }
    }

    let rows = features.rows();
    let record = opts.record_weights;
    let tiles: Vec<TileOut> = bins
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let x0 = (t as u32 % tiles_x) * TILE_SIZE;
            let y0 = (t as u32 / tiles_x) * TILE_SIZE;
            let w = TILE_SIZE.min(width - x0);
            let h = TILE_SIZE.min(height - y0);
            let n = (w * h) as usize;
            let mut out = TileOut {
                x0,
                y0,
                w,
                h,
                color: Vec::with_capacity(n),
                feature: Vec::with_capacity(n),
                alpha: Vec::with_capacity(n),
                lens: Vec::with_capacity(if record { n } else { 0 }),
                entries: Vec::new(),
            };
            for py in y0..y0 + h {
                for px in x0..x0 + w {
                    let before = out.entries.len();
                    let b = blend_pixel(
                        px as f64 + 0.5,
                        py as f64 + 0.5,
                        list.iter().map(|&k| &projected[k as usize]),
                        rows,
                        |index, weight| {
                            if record {
                                out.entries.push(WeightEntry { index, weight: weight as f32 });
                            }
                        },
                    );
                    if record {
                        let len = out.entries.len() - before;
                        if len > MAX_RECORDS_PER_PIXEL {
                            return Err(Error::WeightOverflow { x: px, y: py, cap: MAX_RECORDS_PER_PIXEL });
                        }
                        out.lens.push(len as u16);
                    }
                    out.color.push(b.color.map(|v| v as f32));
                    out.feature.push(b.feature.map(|v| v as f32));
                    out.alpha.push(b.alpha as f32);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut buf = RenderBuffers::empty(width, height, scene.len(), record);
    let mut entries = Vec::with_capacity(tiles.iter().map(|t| t.entries.len()).sum());
    for tile in tiles {
        let base = entries.len() as u32;
        let mut offset = 0u32;
        for ly in 0..tile.h {
            for lx in 0..tile.w {
                let l = (ly * tile.w + lx) as usize;
                let p = buf.index(tile.x0 + lx, tile.y0 + ly);
                buf.color[p] = tile.color[l];
                buf.feature_fine[p] = tile.feature[l];
                buf.feature_coarse[p].copy_from_slice(&tile.feature[l][..COARSE_DIM]);
                buf.alpha_acc[p] = tile.alpha[l];
                if let Some(wr) = buf.weights.as_mut() {
                    wr.starts[p] = base + offset;
                    wr.lens[p] = tile.lens[l];
                    offset += tile.lens[l] as u32;
                }
            }
        }
        entries.extend(tile.entries);
    }
    if let Some(wr) = buf.weights.as_mut() {
        *wr = WeightRecords { starts: std::mem::take(&mut wr.starts), lens: std::mem::take(&mut wr.lens), entries };
    }
    Ok(buf)
}

/// Blend result for a single pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    pub color: [f32; 3],
    pub feature: [f32; FEATURE_DIM],
    pub alpha: f32,
}

/// Renders one pixel from an already projected set (any order); equals the
/// corresponding pixel of [`render`].
pub fn render_pixel(projected: &[ProjectedGaussian], features: &FeatureStore, x: u32, y: u32) -> PixelSample {
    let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut hits: Vec<&ProjectedGaussian> = projected
        .iter()
        .filter(|g| (cx - g.mean2d[0]).abs() <= g.extent && (cy - g.mean2d[1]).abs() <= g.extent)
        .collect();
    hits.sort_unstable_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));
    let b = blend_pixel(cx, cy, hits.into_iter(), features.rows(), |_, _| {});
    PixelSample { color: b.color.map(|v| v as f32), feature: b.feature.map(|v| v as f32), alpha: b.alpha as f32 }
}

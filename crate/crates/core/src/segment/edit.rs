use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::scene::{FeatureStore, GaussianScene};
use crate::{Error, Result};

/// Scene edit applied to a selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum EditOp {
    Remove,
    Translate { offset: [f32; 3] },
    /// Scales the selection about its centroid.
    Rescale { factor: f32 },
    /// Appends copies (features included) shifted by `offset`.
    Duplicate { offset: [f32; 3] },
}

/// Applies `op` to the Gaussians in `selection`, returning a new scene and
/// feature store; the inputs are left untouched.
///
/// Positions are updated with single f32 additions, so translating by `v`
/// and then by `-v` restores them bit-exactly whenever both sums are exact
/// in f32 (e.g. dyadic offsets of modest magnitude).
pub fn apply_edit(
    scene: &GaussianScene,
    features: &FeatureStore,
    selection: &BTreeSet<u32>,
    op: &EditOp,
) -> Result<(GaussianScene, FeatureStore)> {
    if features.len() != scene.len() {
        return Err(Error::Contract(format!("{} feature rows for {} Gaussians", features.len(), scene.len())));
    }
    if let Some(&last) = selection.last() {
        if last as usize >= scene.len() {
            return Err(Error::Contract(format!("selected Gaussian {last} out of {}", scene.len())));
        }
    }
    if selection.is_empty() && !matches!(op, EditOp::Remove) {
        return Err(Error::Precondition("edit needs a nonempty selection".into()));
    }
    let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
    let mut gs = scene.gaussians().to_vec();
    let mut rows = features.rows().to_vec();
    match *op {
        EditOp::Remove => {
            let keep: Vec<bool> = (0..gs.len()).map(|i| !selection.contains(&(i as u32))).collect();
            let mut k = keep.iter();
            gs.retain(|_| *k.next().unwrap());
            let mut k = keep.iter();
            rows.retain(|_| *k.next().unwrap());
        }
        EditOp::Translate { offset } => {
            if !finite(&offset) {
                return Err(Error::Precondition("non-finite offset".into()));
            }
            for &i in selection {
                let p = &mut gs[i as usize].position;
                for c in 0..3 {
                    p[c] += offset[c];
                }
            }
        }
        EditOp::Rescale { factor } => {
            if !(factor.is_finite() && factor > 0.0) {
                return Err(Error::Precondition(format!("rescale factor must be positive, got {factor}")));
            }
            let mut centroid = [0.0f64; 3];
            for &i in selection {
                for c in 0..3 {
                    centroid[c] += gs[i as usize].position[c] as f64;
                }
            }
            let centroid = centroid.map(|v| v / selection.len() as f64);
            let f = factor as f64;
            for &i in selection {
                let g = &mut gs[i as usize];
                for c in 0..3 {
                    g.position[c] = (centroid[c] + f * (g.position[c] as f64 - centroid[c])) as f32;
                    g.scale[c] = (g.scale[c] as f64 * f) as f32;
                }
            }
        }
        EditOp::Duplicate { offset } => {
            if !finite(&offset) {
                return Err(Error::Precondition("non-finite offset".into()));
            }
            for &i in selection {
                let mut g = gs[i as usize];
                for c in 0..3 {
                    g.position[c] += offset[c];
                }
                gs.push(g);
                rows.push(rows[i as usize]);
            }
        }
    }
    Ok((GaussianScene::new(gs, scene.sh_degree()), FeatureStore::from_rows(rows, features.layout())))
}

//! Ground-truth synthetic scenes with clean or corrupted per-view masks, plus
//! the brute-force render oracle and label metrics used to score results.

mod oracle;

pub use oracle::{brute_force_render, gaussian_accuracy, set_iou, LabelAccuracy};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imageio::write_gray16;
use crate::masks::{save_segments, RawSegments, Segment};
use crate::raster::{render, RenderOptions};
use crate::scene::{save_cameras, save_scene, Camera, FeatureStore, Gaussian, GaussianScene};
use crate::{Error, FineLayout, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectLayout {
    Grid,
    Random,
}

/// Per-view mask corruption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Randomly relabel segment IDs in every view.
    pub id_permutation: bool,
    /// Probability that a fine segment is cut in two along a line through its centroid.
    pub split_prob: f64,
    /// Probability that two vertically adjacent parts of an object share one fine segment.
    pub merge_prob: f64,
    /// Each segment is dilated or eroded (coin flip) by this many pixels.
    pub jitter_px: u32,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { id_permutation: false, split_prob: 0.0, merge_prob: 0.0, jitter_px: 0 }
    }
}

impl NoiseModel {
    pub fn is_clean(&self) -> bool {
        *self == NoiseModel::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub objects: usize,
    pub parts_per_object: usize,
    pub gaussians_per_part: usize,
    pub layout: ObjectLayout,
    /// Training views on the camera ring.
    pub train_views: usize,
    /// Additional ring views kept out of training.
    pub held_out_views: usize,
    pub ring_radius: f64,
    pub elevation_deg: f64,
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            objects: 3,
            parts_per_object: 3,
            gaussians_per_part: 100,
            layout: ObjectLayout::Grid,
            train_views: 24,
            held_out_views: 8,
            ring_radius: 2.6,
            elevation_deg: 40.0,
            width: 64,
            height: 64,
            fov_deg: 40.0,
            noise: NoiseModel::default(),
            seed: 0,
        }
    }
}

/// Height of one part's box.
const PART_HEIGHT: f32 = 0.3;
/// Half the side of a part's square footprint.
const PART_HALF_WIDTH: f32 = 0.2;
/// Vertical gap between the splat centers of stacked parts.
const PART_GAP: f32 = 0.12;
/// Isotropic Gaussian scale inside parts.
const GAUSSIAN_SCALE: f32 = 0.05;
/// Minimum Chebyshev distance between object centers; footprints stay 0.4
/// apart, well above twice the splat scale.
const OBJECT_SPACING: f32 = 0.8;
/// Pixels whose accumulated opacity is below this are background in the truth maps.
pub const GT_OPACITY: f32 = 0.5;

impl SyntheticSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: SyntheticSpec =
            toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.objects == 0 || self.parts_per_object == 0 || self.gaussians_per_part == 0 {
            return bad("objects, parts_per_object and gaussians_per_part must be positive");
        }
        if self.train_views < 2 {
            return bad("need at least 2 training views");
        }
        if self.width == 0 || self.height == 0 || !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return bad("invalid image size or field of view");
        }
        for p in [self.noise.split_prob, self.noise.merge_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("noise probabilities must be in [0, 1]");
            }
        }
        if self.objects * self.parts_per_object >= 1 << 15 {
            return bad("too many parts");
        }
        Ok(())
    }

    pub fn part_count(&self) -> usize {
        self.objects * self.parts_per_object
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaussianLabel {
    pub object: usize,
    /// Global part index: object * parts_per_object + local part.
    pub part: usize,
}

/// Per-pixel truth for one view: 0 = background, otherwise object + 1 / part + 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthView {
    pub view_id: u32,
    pub width: u32,
    pub height: u32,
    pub object: Vec<i32>,
    pub part: Vec<i32>,
}

/// One split decision of the noise model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitTrial {
    pub view_id: u32,
    /// Global part index of the (first part of the) fine segment.
    pub family: usize,
    pub split: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SyntheticSpec,
    pub scene: GaussianScene,
    pub labels: Vec<GaussianLabel>,
    /// All ring cameras; view id = index.
    pub cameras: Vec<Camera>,
    pub train_views: Vec<u32>,
    pub held_out_views: Vec<u32>,
    /// Segments of the training views (view-local IDs).
    pub segments: Vec<RawSegments>,
    /// Truth maps for every camera, indexed by view id.
    pub ground_truth: Vec<GroundTruthView>,
    pub split_trials: Vec<SplitTrial>,
}

fn object_centers(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<[f32; 2]> {
    let n = spec.objects;
    match spec.layout {
        ObjectLayout::Grid => {
            let cols = (n as f64).sqrt().ceil() as usize;
            let rows = n.div_ceil(cols);
            (0..n)
                .map(|k| {
                    let (c, r) = ((k % cols) as f32, (k / cols) as f32);
                    [
                        (c - (cols as f32 - 1.0) / 2.0) * OBJECT_SPACING,
                        (r - (rows as f32 - 1.0) / 2.0) * OBJECT_SPACING,
                    ]
                })
                .collect()
        }
        ObjectLayout::Random => {
            let radius = OBJECT_SPACING * (n as f32).sqrt();
            let mut out: Vec<[f32; 2]> = Vec::new();
            let mut attempts = 0;
            while out.len() < n {
                attempts += 1;
                let r = radius * if attempts > 10_000 { 4.0 } else { 1.0 };
                let c = [rng.random_range(-r..r), rng.random_range(-r..r)];
                if out.iter().all(|o| (o[0] - c[0]).abs().max((o[1] - c[1]).abs()) >= OBJECT_SPACING) {
                    out.push(c);
                }
            }
            out
        }
    }
}

enum Face {
    Side(u8),
    Cap(bool),
}

/// Picks an exposed face of a part box, weighted by area. Stacked parts only
/// expose their sides, plus the bottom/top cap of the lowest/highest part.
fn surface_face(rng: &mut ChaCha8Rng, [bottom, top]: [bool; 2]) -> Face {
    let side = (2.0 * PART_HALF_WIDTH * PART_HEIGHT) as f64;
    let cap = (4.0 * PART_HALF_WIDTH * PART_HALF_WIDTH) as f64;
    let total = 4.0 * side + cap * (bottom as u8 + top as u8) as f64;
    let mut r = rng.random_range(0.0..total);
    for s in 0..4 {
        if r < side {
            return Face::Side(s);
        }
        r -= side;
    }
    Face::Cap(bottom && (r < cap || !top))
}

/// Gaussians sit on the exposed surface of every part (trained splat scenes
/// concentrate on surfaces, and interior splats would never be observed).
/// Stacked parts are separated by a thin gap that splats still cover.
fn build_scene(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> (GaussianScene, Vec<GaussianLabel>) {
    let centers = object_centers(spec, rng);
    // Objects 0 and 1 share nearly the same palette (chromatically similar, semantically distinct).
    let mut base: Vec<[f32; 3]> = (0..spec.objects).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    if spec.objects > 1 {
        // Chromatically similar, semantically distinct.
        base[0] = [0.60, 0.42, 0.31];
        base[1] = [0.62, 0.40, 0.30];
    }
    let half = PART_HALF_WIDTH;
    let mut gaussians = Vec::new();
    let mut labels = Vec::new();
    for o in 0..spec.objects {
        for k in 0..spec.parts_per_object {
            let shade = 0.8 + 0.2 * k as f32 / spec.parts_per_object.max(2) as f32;
            let color = base[o].map(|c| (c * shade).clamp(0.0, 1.0));
            let cz = PART_HEIGHT * (k as f32 + 0.5);
            let caps = [k == 0, k + 1 == spec.parts_per_object];
            for _ in 0..spec.gaussians_per_part {
                let [u, v] = [rng.random_range(-half..half), rng.random_range(-half..half)];
                let p = match surface_face(rng, caps) {
                    Face::Side(0) => [-half, u, v],
                    Face::Side(1) => [half, u, v],
                    Face::Side(2) => [u, -half, v],
                    Face::Side(_) => [u, half, v],
                    Face::Cap(bottom) => [u, v, if bottom { -half } else { half }],
                };
                let p = [centers[o][0] + p[0], centers[o][1] + p[1], cz + p[2] * (0.5 * PART_HEIGHT - 0.5 * PART_GAP) / half];
                gaussians.push(Gaussian::with_color(p, [GAUSSIAN_SCALE; 3], 0.9, color));
                labels.push(GaussianLabel { object: o, part: o * spec.parts_per_object + k });
            }
        }
    }
    (GaussianScene::new(gaussians, 0), labels)
}

fn ring_cameras(spec: &SyntheticSpec, height_center: f32) -> (Vec<Camera>, Vec<u32>, Vec<u32>) {
    let total = spec.train_views + spec.held_out_views;
    let elev = spec.elevation_deg.to_radians();
    let target = [0.0, 0.0, height_center as f64];
    let cams: Vec<Camera> = (0..total)
        .map(|k| {
            let az = 2.0 * std::f64::consts::PI * k as f64 / total as f64;
            let eye = [
                spec.ring_radius * elev.cos() * az.cos(),
                spec.ring_radius * elev.cos() * az.sin(),
                target[2] + spec.ring_radius * elev.sin(),
            ];
            Camera::look_at(eye, target, [0.0, 0.0, 1.0], spec.width, spec.height, spec.fov_deg)
        })
        .collect();
    let mut held: Vec<u32> = (0..spec.held_out_views)
        .map(|i| (((2 * i + 1) * total) / (2 * spec.held_out_views)).min(total - 1) as u32)
        .collect();
    held.dedup();
    let train = (0..total as u32).filter(|v| !held.contains(v)).collect();
    (cams, train, held)
}

/// Per-pixel argmax of accumulated blend weight per object and part, where
/// the accumulated opacity reaches [`GT_OPACITY`].
fn ground_truth_view(
    scene: &GaussianScene,
    labels: &[GaussianLabel],
    camera: &Camera,
    view_id: u32,
    parts: usize,
) -> Result<GroundTruthView> {
    let dummy = FeatureStore::zeros(scene.len(), FineLayout::Shared);
    let buf = render(scene, &dummy, camera, RenderOptions { record_weights: true })?;
    let records = buf.weights.as_ref().expect("recorded");
    let n = buf.pixel_count();
    let mut object = vec![0; n];
    let mut part = vec![0; n];
    let mut acc = vec![0.0f64; parts];
    for p in 0..n {
        if buf.alpha_acc[p] < GT_OPACITY {
            continue;
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        for e in records.pixel(p) {
            acc[labels[e.index as usize].part] += e.weight as f64;
        }
        let best = (0..parts).max_by(|&a, &b| acc[a].total_cmp(&acc[b]).then(b.cmp(&a))).unwrap();
        let parts_per_object = parts / labels.iter().map(|l| l.object + 1).max().unwrap_or(1);
        part[p] = best as i32 + 1;
        // Object truth uses summed weight over its parts.
        let objects = parts / parts_per_object;
        let best_obj = (0..objects)
            .max_by(|&a, &b| {
                let sa: f64 = acc[a * parts_per_object..(a + 1) * parts_per_object].iter().sum();
                let sb: f64 = acc[b * parts_per_object..(b + 1) * parts_per_object].iter().sum();
                sa.total_cmp(&sb).then(b.cmp(&a))
            })
            .unwrap();
        object[p] = best_obj as i32 + 1;
    }
    Ok(GroundTruthView { view_id, width: camera.width, height: camera.height, object, part })
}

fn dilate_or_erode(mask: &[bool], w: usize, h: usize, r: usize, dilate: bool) -> Vec<bool> {
    if r == 0 {
        return mask.to_vec();
    }
    // Separable square structuring element.
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut v = !dilate;
                for d in -(r as i64)..=(r as i64) {
                    let (xx, yy) = if horizontal { (x as i64 + d, y as i64) } else { (x as i64, y as i64 + d) };
                    let s = if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                        false
                    } else {
                        src[yy as usize * w + xx as usize]
                    };
                    if dilate {
                        v |= s;
                    } else {
                        v &= s;
                    }
                }
                out[y * w + x] = v;
            }
        }
        out
    };
    pass(&pass(mask, true), false)
}

/// Builds the (possibly corrupted) segment list of one training view.
///
/// Noise is applied to the fine partition (merge, then split, then boundary
/// jitter); object segments follow their parts, so both levels stay nested.
fn view_segments(
    spec: &SyntheticSpec,
    gt: &GroundTruthView,
    rng: &mut ChaCha8Rng,
    trials: &mut Vec<SplitTrial>,
) -> RawSegments {
    let (w, h) = (gt.width as usize, gt.height as usize);
    let ppo = spec.parts_per_object;
    let noise = &spec.noise;
    // fine[p]: 0 or 1 + index into `owner`; coarse[p]: 0 or object + 1.
    let mut fine = vec![0usize; w * h];
    let mut coarse: Vec<usize> = gt.object.iter().map(|&v| v as usize).collect();
    let mut owner: Vec<usize> = Vec::new();
    let mut add = |m: &[bool], o: usize, fine: &mut [usize]| {
        owner.push(o);
        for p in 0..m.len() {
            if m[p] {
                fine[p] = owner.len();
            }
        }
    };
    for o in 0..spec.objects {
        // Merge decisions chain adjacent parts into groups.
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for k in 0..ppo {
            if k > 0 && noise.merge_prob > 0.0 && rng.random_bool(noise.merge_prob) {
                groups.last_mut().unwrap().push(k);
            } else {
                groups.push(vec![k]);
            }
        }
        for g in groups {
            let ids: Vec<i32> = g.iter().map(|&k| (o * ppo + k) as i32 + 1).collect();
            let m: Vec<bool> = gt.part.iter().map(|v| ids.contains(v)).collect();
            let count = m.iter().filter(|&&b| b).count();
            if count == 0 {
                continue;
            }
            let split = noise.split_prob > 0.0 && rng.random_bool(noise.split_prob);
            trials.push(SplitTrial { view_id: gt.view_id, family: o * ppo + g[0], split });
            if split {
                let (mut cx, mut cy) = (0.0, 0.0);
                for (p, _) in m.iter().enumerate().filter(|(_, &b)| b) {
                    cx += (p % w) as f64 + 0.5;
                    cy += (p / w) as f64 + 0.5;
                }
                cx /= count as f64;
                cy /= count as f64;
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let (c, s) = (theta.cos(), theta.sin());
                let side = |p: usize| ((p % w) as f64 + 0.5 - cx) * c + ((p / w) as f64 + 0.5 - cy) * s >= 0.0;
                for half in [true, false] {
                    let part: Vec<bool> = (0..m.len()).map(|p| m[p] && side(p) == half).collect();
                    if part.iter().any(|&v| v) {
                        add(&part, o, &mut fine);
                    }
                }
            } else {
                add(&m, o, &mut fine);
            }
        }
    }
    if noise.jitter_px > 0 {
        // Each fine segment in turn grows (taking pixels from its neighbors or
        // the background) or shrinks (leaving its border unassigned).
        for (k, &o) in owner.iter().enumerate() {
            let label = k + 1;
            let dilate = rng.random_bool(0.5);
            let m: Vec<bool> = fine.iter().map(|&v| v == label).collect();
            if !m.iter().any(|&b| b) {
                continue;
            }
            let j = dilate_or_erode(&m, w, h, noise.jitter_px as usize, dilate);
            if !j.iter().any(|&b| b) {
                continue;
            }
            for p in 0..m.len() {
                if dilate && j[p] && !m[p] {
                    fine[p] = label;
                    coarse[p] = o + 1;
                } else if !dilate && m[p] && !j[p] {
                    fine[p] = 0;
                    coarse[p] = 0;
                }
            }
        }
    }
    let mut masks: Vec<Vec<bool>> = (1..=spec.objects).map(|o| coarse.iter().map(|&v| v == o).collect()).collect();
    masks.extend((1..=owner.len()).map(|k| fine.iter().map(|&v| v == k).collect()));
    masks.retain(|m| m.iter().any(|&b| b));
    let mut ids: Vec<u32> = (1..=masks.len() as u32).collect();
    if noise.id_permutation {
        ids.shuffle(rng);
    }
    let mut segments: Vec<Segment> = masks
        .iter()
        .zip(&ids)
        .filter_map(|(m, &id)| Segment::from_mask(id, gt.width, gt.height, m))
        .collect();
    segments.sort_by_key(|s| s.id);
    RawSegments { view_id: gt.view_id, width: gt.width, height: gt.height, segments }
}

/// Generates a scene, its truth labels, ring cameras, truth maps for every
/// view and (noisy) segments for the training views.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (scene, labels) = build_scene(spec, &mut rng);
    let (cameras, train_views, held_out_views) =
        ring_cameras(spec, PART_HEIGHT * spec.parts_per_object as f32 * 0.5);
    let parts = spec.part_count();
    let ground_truth = cameras
        .iter()
        .enumerate()
        .map(|(v, cam)| ground_truth_view(&scene, &labels, cam, v as u32, parts))
        .collect::<Result<Vec<_>>>()?;
    let mut split_trials = Vec::new();
    let segments = train_views
        .iter()
        .map(|&v| view_segments(spec, &ground_truth[v as usize], &mut rng, &mut split_trials))
        .collect();
    Ok(SyntheticScene {
        spec: spec.clone(),
        scene,
        labels,
        cameras,
        train_views,
        held_out_views,
        segments,
        ground_truth,
        split_trials,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    spec: &'a SyntheticSpec,
    train_views: &'a [u32],
    held_out_views: &'a [u32],
    labels: &'a [GaussianLabel],
}

impl SyntheticScene {
    /// Writes `scene.ply`, `cameras.json`, `masks/<view>.cgsg`,
    /// `gt/<view>_object.png`, `gt/<view>_part.png` and `manifest.json`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("masks"))?;
        std::fs::create_dir_all(dir.join("gt"))?;
        save_scene(&self.scene, dir.join("scene.ply"))?;
        save_cameras(&self.cameras, dir.join("cameras.json"))?;
        for s in &self.segments {
            save_segments(s, dir.join("masks"))?;
        }
        for g in &self.ground_truth {
            let to16 = |v: &[i32]| v.iter().map(|&x| x as u16).collect::<Vec<u16>>();
            write_gray16(dir.join("gt").join(format!("{:04}_object.png", g.view_id)), g.width, g.height, &to16(&g.object))?;
            write_gray16(dir.join("gt").join(format!("{:04}_part.png", g.view_id)), g.width, g.height, &to16(&g.part))?;
        }
        let manifest = Manifest {
            spec: &self.spec,
            train_views: &self.train_views,
            held_out_views: &self.held_out_views,
            labels: &self.labels,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;
        Ok(())
    }

    /// Object label per Gaussian.
    pub fn object_labels(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.object).collect()
    }

    /// Global part label per Gaussian.
    pub fn part_labels(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.part).collect()
    }
}

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    adam_step, contrastive_loss, gfl_loss, norm2d_loss, norm3d_loss, sample_pixels, spatial_loss, PixelBatch,
    TrainConfig,
};
use crate::cluster::{build_global_clusters, build_kd_index, knn, pool_views, GlobalClusters};
use crate::masks::TwoLevelMask;
use crate::raster::{backward_features, render, RenderOptions};
use crate::scene::{config_digest, Camera, Checkpoint, FeatureStore, GaussianScene, OptimizerState};
use crate::{Error, Result, FEATURE_DIM};

/// Training terms are logged at this iteration interval.
pub const LOG_EVERY: usize = 50;

/// Loss terms of one iteration (unweighted) and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct TrainLogEntry {
    pub iteration: usize,
    pub view_id: u32,
    pub cont_pos: f64,
    pub cont_neg: f64,
    pub gfl_pos: f64,
    pub gfl_neg: f64,
    pub norm3d: f64,
    pub norm2d: f64,
    pub spatial: f64,
    pub total: f64,
}

impl TrainLogEntry {
    pub fn describe(&self) -> String {
        format!(
            "iter {:5} view {:3} total {:+.5} cont_pos {:+.5} cont_neg {:.5} gfl_pos {:+.5} gfl_neg {:.5} norm3d {:.5} norm2d {:.5} spatial {:+.5}",
            self.iteration,
            self.view_id,
            self.total,
            self.cont_pos,
            self.cont_neg,
            self.gfl_pos,
            self.gfl_neg,
            self.norm3d,
            self.norm2d,
            self.spatial
        )
    }
}

/// Renders every training view and clusters the pooled segment features.
pub fn compute_global_clusters(
    scene: &GaussianScene,
    features: &FeatureStore,
    cameras: &[Camera],
    masks: &[TwoLevelMask],
    cfg: &TrainConfig,
) -> Result<GlobalClusters> {
    let mut buffers = Vec::with_capacity(masks.len());
    for m in masks {
        buffers.push(render(scene, features, &cameras[m.view_id as usize], RenderOptions::default())?);
    }
    let pooled = pool_views(&buffers, masks, features.layout())?;
    Ok(build_global_clusters(&pooled, masks.len(), cfg.hdbscan_eps_coarse, cfg.hdbscan_eps_fine, features.layout()))
}

/// Feature optimization state over one scene and its training views.
pub struct Trainer<'a> {
    scene: &'a GaussianScene,
    cameras: &'a [Camera],
    masks: &'a [TwoLevelMask],
    cfg: TrainConfig,
    features: FeatureStore,
    optimizer: OptimizerState,
    clusters: GlobalClusters,
    neighbors: Vec<Vec<u32>>,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl<'a> Trainer<'a> {
    /// Validates inputs and initializes features from `cfg.seed`. `masks[k].view_id`
    /// indexes `cameras`.
    pub fn new(scene: &'a GaussianScene, cameras: &'a [Camera], masks: &'a [TwoLevelMask], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if scene.is_empty() {
            return Err(Error::EmptyScene);
        }
        for m in masks {
            let cam = cameras.get(m.view_id as usize).ok_or_else(|| {
                Error::Precondition(format!("mask for view {} but only {} cameras", m.view_id, cameras.len()))
            })?;
            cam.validate()?;
            if (cam.width, cam.height) != (m.width, m.height) {
                return Err(Error::Precondition(format!(
                    "view {}: camera is {}x{}, mask is {}x{}",
                    m.view_id, cam.width, cam.height, m.width, m.height
                )));
            }
        }
        let usable = masks.iter().filter(|m| !m.assigned_pixels().is_empty()).count();
        if usable < 2 {
            return Err(Error::Precondition(format!("training needs at least 2 views with masks, got {usable}")));
        }
        let features = FeatureStore::random(scene.len(), cfg.seed, cfg.fine_layout);
        let neighbors = if cfg.lambda4 > 0.0 && scene.len() > cfg.k_neighbors {
            let index = build_kd_index(&scene.positions());
            knn(&index, &(0..scene.len()).collect::<Vec<_>>(), cfg.k_neighbors)?
        } else {
            Vec::new()
        };
        Ok(Trainer {
            scene,
            cameras,
            masks,
            optimizer: OptimizerState::new(scene.len()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_7EA1),
            cfg,
            features,
            clusters: GlobalClusters::default(),
            neighbors,
            iteration: 0,
        })
    }

    pub fn features(&self) -> &FeatureStore {
        &self.features
    }

    pub fn clusters(&self) -> &GlobalClusters {
        &self.clusters
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn refresh_clusters(&mut self) -> Result<()> {
        self.clusters = compute_global_clusters(self.scene, &self.features, self.cameras, self.masks, &self.cfg)?;
        log::debug!(
            "iteration {}: {} coarse / {} fine global clusters",
            self.iteration,
            self.clusters.coarse.len(),
            self.clusters.fine.len()
        );
        Ok(())
    }

    fn gfl_active(&self) -> bool {
        self.cfg.lambda1 > 0.0 && self.iteration >= self.cfg.gfl_start
    }

    /// Runs one optimization step.
    pub fn step(&mut self) -> Result<TrainLogEntry> {
        let cfg = &self.cfg;
        let it = self.iteration;
        if cfg.lambda1 > 0.0 && it >= cfg.gfl_start && (it - cfg.gfl_start) % cfg.gfl_update_every == 0 {
            self.refresh_clusters()?;
        }
        let cfg = &self.cfg;
        let mask = &self.masks[self.rng.random_range(0..self.masks.len())];
        let camera = &self.cameras[mask.view_id as usize];
        let layout = self.features.layout();
        let buffers = render(self.scene, &self.features, camera, RenderOptions { record_weights: true })?;

        let pixels = sample_pixels(mask, cfg.pixels_per_iter, &mut self.rng);
        let batch = PixelBatch {
            features: pixels.iter().map(|&p| buffers.feature_fine[p].map(|v| v as f64)).collect(),
            coarse_ids: pixels.iter().map(|&p| mask.coarse[p]).collect(),
            fine_ids: pixels.iter().map(|&p| mask.fine[p]).collect(),
        };
        let (cont, cont_grad) = contrastive_loss(&batch, layout, cfg);
        let (norm2d, norm2d_grad) = norm2d_loss(&buffers, layout);
        let mut pixel_grads: Vec<(usize, [f64; FEATURE_DIM])> = pixels.iter().copied().zip(cont_grad).collect();
        if cfg.lambda3 > 0.0 {
            pixel_grads.extend(norm2d_grad.into_iter().map(|(p, g)| (p, g.map(|v| v * cfg.lambda3))));
        }
        let mut grads = backward_features(&buffers, &pixel_grads)?;
        drop(buffers);

        let mut entry = TrainLogEntry {
            iteration: it,
            view_id: mask.view_id,
            cont_pos: cont.pos,
            cont_neg: cont.neg,
            norm2d,
            ..Default::default()
        };
        let mut add = |g: &[[f64; FEATURE_DIM]], w: f64| {
            for (a, b) in grads.iter_mut().zip(g) {
                for k in 0..FEATURE_DIM {
                    a[k] += w * b[k];
                }
            }
        };
        if self.gfl_active() {
            let (t, g) = gfl_loss(&self.features, &self.clusters, cfg);
            entry.gfl_pos = t.pos;
            entry.gfl_neg = t.neg;
            add(&g, cfg.lambda1);
        }
        let (n3, g3) = norm3d_loss(&self.features);
        entry.norm3d = n3;
        if cfg.lambda2 > 0.0 {
            add(&g3, cfg.lambda2);
        }
        if !self.neighbors.is_empty() {
            let n = self.scene.len();
            let chosen: Vec<usize> =
                if cfg.n_spatial >= n { (0..n).collect() } else { sample(&mut self.rng, n, cfg.n_spatial).into_vec() };
            let samples: Vec<(usize, &[u32])> = chosen.iter().map(|&i| (i, &self.neighbors[i][..])).collect();
            let (sp, gs) = spatial_loss(&self.features, &samples);
            entry.spatial = sp;
            add(&gs, cfg.lambda4);
        }
        entry.total = entry.cont_pos
            + cfg.lambda_neg_cont * entry.cont_neg
            + cfg.lambda1 * (entry.gfl_pos + entry.gfl_neg)
            + cfg.lambda2 * entry.norm3d
            + cfg.lambda3 * entry.norm2d
            + cfg.lambda4 * entry.spatial;
        if !entry.total.is_finite() || grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration: it, terms: entry.describe() });
        }
        adam_step(&mut self.features, &grads, &mut self.optimizer, cfg.learning_rate);
        self.iteration += 1;
        Ok(entry)
    }

    /// Runs the remaining iterations, calling `on_entry` for every step, then
    /// refreshes the clusters for the final features.
    pub fn run(mut self, mut on_entry: impl FnMut(&TrainLogEntry)) -> Result<Checkpoint> {
        while self.iteration < self.cfg.iterations {
            let e = self.step()?;
            if e.iteration % LOG_EVERY == 0 || e.iteration + 1 == self.cfg.iterations {
                log::info!("{}", e.describe());
            }
            on_entry(&e);
        }
        if self.cfg.iterations > 0 {
            self.refresh_clusters()?;
        }
        Ok(self.into_checkpoint())
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration as u64,
            config_digest: config_digest(&self.cfg),
            optimizer: (self.iteration > 0).then_some(self.optimizer),
            clusters: self.clusters,
            features: self.features,
        }
    }
}

/// Trains features for `scene` from per-view masks and returns the final checkpoint.
pub fn train(scene: &GaussianScene, cameras: &[Camera], masks: &[TwoLevelMask], cfg: &TrainConfig) -> Result<Checkpoint> {
    Trainer::new(scene, cameras, masks, cfg.clone())?.run(|_| {})
}

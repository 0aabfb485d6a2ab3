use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use base64::Engine as _;
use cgseg_core::cluster::GlobalClusters;
use cgseg_core::imageio;
use cgseg_core::raster::{render, RenderOptions};
use cgseg_core::scene::{Camera, Checkpoint, FeatureStore, GaussianScene};
use cgseg_core::segment::{apply_edit, best_cluster, click_select, match_pixels, segment_buffers, EditOp, EnginePolicy, Selection};
use cgseg_core::{Error, Level};

use crate::protocol::{OverlayMode, Request, Response};

/// Immutable data shared by every session.
pub struct ServerState {
    pub scene: Arc<GaussianScene>,
    pub features: Arc<FeatureStore>,
    pub clusters: GlobalClusters,
    pub policy: EnginePolicy,
    pub default_camera: Camera,
    next_id: AtomicU64,
    live: AtomicUsize,
}

impl ServerState {
    pub fn new(scene: GaussianScene, checkpoint: Checkpoint, policy: EnginePolicy) -> cgseg_core::Result<Self> {
        if checkpoint.features.len() != scene.len() {
            return Err(Error::Contract(format!(
                "checkpoint has {} feature rows but the scene has {} Gaussians",
                checkpoint.features.len(),
                scene.len()
            )));
        }
        let default_camera = scene.overview_camera(256, 256)?;
        Ok(ServerState {
            scene: Arc::new(scene),
            features: Arc::new(checkpoint.features),
            clusters: checkpoint.clusters,
            policy,
            default_camera,
            next_id: AtomicU64::new(1),
            live: AtomicUsize::new(0),
        })
    }

    /// Sessions currently connected.
    pub fn live_sessions(&self) -> usize {
        self.live.load(Ordering::Relaxed)
    }

    pub fn health(&self) -> serde_json::Value {
        serde_json::json!({
            "status": "ok",
            "version": env!("CARGO_PKG_VERSION"),
            "protocol": crate::protocol::PROTOCOL_VERSION,
            "gaussians": self.scene.len(),
            "clusters": { "coarse": self.clusters.coarse.len(), "fine": self.clusters.fine.len() },
            "sessions": self.live_sessions(),
        })
    }
}

struct Snapshot {
    scene: Arc<GaussianScene>,
    features: Arc<FeatureStore>,
}

/// One edit as applied: the Gaussian IDs it touched and the operation.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub selection: BTreeSet<u32>,
    pub op: EditOp,
}

/// Per-connection state. Edits build new scene values; the shared base is
/// never modified.
pub struct Session {
    pub id: u64,
    shared: Arc<ServerState>,
    scene: Arc<GaussianScene>,
    features: Arc<FeatureStore>,
    camera: Camera,
    selection: Option<Selection>,
    overlay: OverlayMode,
    overlay_level: Level,
    undo: Vec<Snapshot>,
    history: Vec<HistoryEntry>,
}

/// Error code and message sent back to the client.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: &'static str,
    pub message: String,
}

impl Failure {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Failure { code: "bad_request", message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::BackgroundClick { .. } => "background_click",
            Error::NoConfidentMatch { .. } => "no_confident_match",
            Error::Precondition(_) => "precondition_failed",
            Error::InvalidCamera(_) => "invalid_camera",
            _ => "internal",
        };
        Failure { code, message: e.to_string() }
    }
}

impl Session {
    pub fn new(shared: Arc<ServerState>) -> Self {
        let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
        shared.live.fetch_add(1, Ordering::Relaxed);
        Session {
            id,
            scene: shared.scene.clone(),
            features: shared.features.clone(),
            camera: shared.default_camera.clone(),
            selection: None,
            overlay: OverlayMode::None,
            overlay_level: Level::Coarse,
            undo: Vec::new(),
            history: Vec::new(),
            shared,
        }
    }

    pub fn scene(&self) -> &GaussianScene {
        &self.scene
    }

    pub fn features(&self) -> &FeatureStore {
        &self.features
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn selection(&self) -> Option<&Selection> {
        self.selection.as_ref()
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn hello(&self) -> Response {
        Response::Hello {
            protocol: crate::protocol::PROTOCOL_VERSION,
            version: env!("CARGO_PKG_VERSION").into(),
            session_id: self.id,
            width: self.camera.width,
            height: self.camera.height,
        }
    }

    /// Re-applies the edit history to the base scene.
    pub fn replay(&self) -> cgseg_core::Result<(GaussianScene, FeatureStore)> {
        let mut scene = (*self.shared.scene).clone();
        let mut features = (*self.shared.features).clone();
        for h in &self.history {
            (scene, features) = apply_edit(&scene, &features, &h.selection, &h.op)?;
        }
        Ok((scene, features))
    }

    /// Processes one request, returning the messages to send back in order.
    pub fn handle(&mut self, seq: Option<u64>, req: Request) -> Vec<Response> {
        match self.dispatch(seq, req) {
            Ok(out) => out,
            Err(f) => vec![Response::Error { seq, code: f.code.into(), message: f.message }],
        }
    }

    fn dispatch(&mut self, seq: Option<u64>, req: Request) -> Result<Vec<Response>, Failure> {
        let ack = Response::Ack { seq };
        match req {
            Request::SetCamera { pose, intrinsics } => {
                self.camera = Request::camera(&pose, intrinsics).map_err(Failure::bad_request)?;
                Ok(vec![ack])
            }
            Request::Click { x, y, level } => {
                let sel = click_select(
                    &self.scene,
                    &self.features,
                    &self.shared.clusters,
                    &self.camera,
                    x,
                    y,
                    level,
                    &self.shared.policy,
                )?;
                let msg = Response::Selection {
                    seq,
                    level,
                    cluster_ids: sel.cluster_ids.iter().copied().collect(),
                    gaussian_count: sel.gaussian_ids.len(),
                };
                self.selection = Some(sel);
                Ok(vec![msg])
            }
            Request::ClearSelection => {
                self.selection = None;
                Ok(vec![ack])
            }
            Request::Edit { op, params } => {
                let op = Request::edit_op(&op, &params).map_err(Failure::bad_request)?;
                let selection = self.selection.as_ref().map(|s| s.gaussian_ids.clone()).unwrap_or_default();
                let (scene, features) = apply_edit(&self.scene, &self.features, &selection, &op)?;
                let prev = Snapshot {
                    scene: std::mem::replace(&mut self.scene, Arc::new(scene)),
                    features: std::mem::replace(&mut self.features, Arc::new(features)),
                };
                self.undo.push(prev);
                self.history.push(HistoryEntry { selection, op });
                // Indices shift after removal and duplication adds members the
                // selection does not know about.
                if matches!(op, EditOp::Remove | EditOp::Duplicate { .. }) {
                    self.selection = None;
                }
                Ok(vec![ack])
            }
            Request::Undo => {
                let prev = self.undo.pop().ok_or_else(|| Failure { code: "nothing_to_undo", message: "undo stack is empty".into() })?;
                self.history.pop();
                self.scene = prev.scene;
                self.features = prev.features;
                self.selection = None;
                Ok(vec![ack])
            }
            Request::SetOverlay { mode, level } => {
                self.overlay = mode;
                if let Some(l) = level {
                    self.overlay_level = l;
                }
                Ok(vec![ack])
            }
            Request::RequestFrame => Ok(vec![self.frame(seq)?]),
        }
    }

    /// Renders the current view and, if enabled, its overlay ID map.
    pub fn frame(&self, seq: Option<u64>) -> Result<Response, Failure> {
        let buf = render(&self.scene, &self.features, &self.camera, RenderOptions::default())?;
        let (w, h) = (buf.width, buf.height);
        let rgb: Vec<f32> = buf.color.iter().flatten().copied().collect();
        let b64 = base64::engine::general_purpose::STANDARD;
        let payload = b64.encode(imageio::encode_rgb8(w, h, &rgb)?);
        let policy = &self.shared.policy;
        let layout = self.features.layout();
        let ids: Option<(Level, Vec<u32>)> = match (self.overlay, &self.selection) {
            (OverlayMode::None, _) => None,
            (OverlayMode::Selection, None) => Some((self.overlay_level, vec![0; buf.pixel_count()])),
            (OverlayMode::Selection, Some(sel)) => {
                let clusters = self.shared.clusters.level(sel.level);
                let hit = match_pixels(&buf, clusters, &sel.cluster_ids, layout, sel.level, policy);
                // Each matched pixel shows its most similar selected cluster.
                let own: Vec<_> = clusters.iter().filter(|c| sel.cluster_ids.contains(&c.id)).cloned().collect();
                let ids = hit
                    .iter()
                    .enumerate()
                    .map(|(p, &m)| match m {
                        false => 0,
                        true => best_cluster(buf.level_feature(p, sel.level, layout), &own).map_or(0, |b| b.0),
                    })
                    .collect();
                Some((sel.level, ids))
            }
            (OverlayMode::SegmentEverything, _) => {
                let level = self.overlay_level;
                Some((level, segment_buffers(&buf, self.shared.clusters.level(level), layout, level, policy).ids))
            }
        };
        let (overlay_ids, overlay_level) = match ids {
            None => (None, None),
            Some((level, ids)) => {
                let values = ids
                    .iter()
                    .map(|&v| u16::try_from(v).map_err(|_| Failure { code: "internal", message: format!("cluster id {v} exceeds 16 bits") }))
                    .collect::<Result<Vec<u16>, _>>()?;
                (Some(b64.encode(imageio::encode_gray16(w, h, &values)?)), Some(level))
            }
        };
        Ok(Response::Frame { seq, width: w, height: h, encoding: "png".into(), payload, overlay_ids, overlay_level })
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.shared.live.fetch_sub(1, Ordering::Relaxed);
    }
}

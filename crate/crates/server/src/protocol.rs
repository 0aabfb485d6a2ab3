//! Wire messages. Every message is a 4-byte big-endian length followed by
//! that many bytes of UTF-8 JSON.

use cgseg_core::scene::Camera;
use cgseg_core::segment::EditOp;
use cgseg_core::Level;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};

pub const PROTOCOL_VERSION: u32 = 1;

/// Largest accepted message body.
pub const MAX_MESSAGE_BYTES: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlayMode {
    #[default]
    None,
    Selection,
    SegmentEverything,
}

/// Client → server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    SetCamera {
        /// World-to-camera matrix, row-major.
        pose: Vec<f64>,
        intrinsics: Intrinsics,
    },
    Click {
        x: u32,
        y: u32,
        level: Level,
    },
    ClearSelection,
    Edit {
        op: String,
        #[serde(default)]
        params: Value,
    },
    Undo,
    SetOverlay {
        mode: OverlayMode,
        #[serde(default)]
        level: Option<Level>,
    },
    RequestFrame,
}

impl Request {
    pub fn camera(pose: &[f64], intr: Intrinsics) -> std::result::Result<Camera, String> {
        if pose.len() != 16 {
            return Err(format!("pose needs 16 values, got {}", pose.len()));
        }
        let mut m = [[0.0; 4]; 4];
        for (k, v) in pose.iter().enumerate() {
            m[k / 4][k % 4] = *v;
        }
        let cam = Camera {
            width: intr.width,
            height: intr.height,
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            world_to_camera: m,
        };
        cam.validate().map_err(|e| e.to_string())?;
        Ok(cam)
    }

    /// `{"op": op, ...params}` read as an edit.
    pub fn edit_op(op: &str, params: &Value) -> std::result::Result<EditOp, String> {
        let mut obj = match params {
            Value::Null => serde_json::Map::new(),
            Value::Object(m) => m.clone(),
            _ => return Err("edit params must be an object".into()),
        };
        obj.insert("op".into(), Value::String(op.into()));
        serde_json::from_value(Value::Object(obj)).map_err(|e| format!("bad edit: {e}"))
    }
}

/// A request as received: optional sequence number plus body.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub seq: Option<u64>,
    pub request: Request,
}

/// Parses one message body. Unknown fields are ignored; unknown types and
/// malformed bodies are errors (reported as `bad_request`). The sequence
/// number is recovered even when the body is otherwise bad.
pub fn parse_request(body: &[u8]) -> std::result::Result<Envelope, (Option<u64>, String)> {
    let value: Value = serde_json::from_slice(body).map_err(|e| (None, format!("invalid JSON: {e}")))?;
    let seq = value.get("seq").and_then(Value::as_u64);
    if !value.is_object() {
        return Err((seq, "message must be a JSON object".into()));
    }
    let request = serde_json::from_value(value).map_err(|e| (seq, e.to_string()))?;
    Ok(Envelope { seq, request })
}

/// Server → client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Hello {
        protocol: u32,
        version: String,
        session_id: u64,
        width: u32,
        height: u32,
    },
    Ack {
        seq: Option<u64>,
    },
    Selection {
        seq: Option<u64>,
        level: Level,
        cluster_ids: Vec<u32>,
        gaussian_count: usize,
    },
    Frame {
        seq: Option<u64>,
        width: u32,
        height: u32,
        encoding: String,
        /// Base64 RGB8 PNG.
        payload: String,
        /// Base64 16-bit grayscale PNG of per-pixel cluster IDs (0 = none).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        overlay_ids: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        overlay_level: Option<Level>,
    },
    Error {
        seq: Option<u64>,
        code: String,
        message: String,
    },
}

pub async fn write_message<W: AsyncWriteExt + Unpin>(w: &mut W, body: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| std::io::Error::other("message too large"))?;
    w.write_all(&len.to_be_bytes()).await?;
    w.write_all(body).await?;
    w.flush().await
}

pub async fn write_response<W: AsyncWriteExt + Unpin>(w: &mut W, r: &Response) -> std::io::Result<()> {
    let body = serde_json::to_vec(r).map_err(std::io::Error::other)?;
    write_message(w, &body).await
}

/// Reads one message body; `None` on a clean end of stream.
pub async fn read_message<R: AsyncReadExt + Unpin>(r: &mut R) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    read_body(r, u32::from_be_bytes(len)).await.map(Some)
}

pub(crate) async fn read_body<R: AsyncReadExt + Unpin>(r: &mut R, len: u32) -> std::io::Result<Vec<u8>> {
    if len as usize > MAX_MESSAGE_BYTES {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("message of {len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).await?;
    Ok(body)
}

//! Interactive session server over a trained checkpoint.
//!
//! One TCP port speaks two things: the length-prefixed JSON session protocol
//! (see [`protocol`]) and, for connections that open with `GET `, a minimal
//! HTTP responder for `/health`. Because the two are told apart by the
//! first bytes, the client speaks first; the server's `hello` precedes its
//! reply to the first message.

pub mod protocol;
mod session;

use std::path::Path;
use std::sync::Arc;

use cgseg_core::scene::{load_scene, Checkpoint};
use cgseg_core::segment::EnginePolicy;
use tokio::io::{AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};

pub use session::{Failure, HistoryEntry, ServerState, Session};

use protocol::{parse_request, read_body, read_message, write_response, Response};

/// Loads the scene and checkpoint from disk.
pub fn load_state(scene: impl AsRef<Path>, checkpoint: impl AsRef<Path>) -> cgseg_core::Result<ServerState> {
    ServerState::new(load_scene(scene)?, Checkpoint::load(checkpoint)?, EnginePolicy::default())
}

/// Accepts connections until the listener fails; each connection runs its
/// own session task.
pub async fn serve(listener: TcpListener, state: Arc<ServerState>) -> std::io::Result<()> {
    loop {
        let (stream, peer) = listener.accept().await?;
        let state = state.clone();
        tokio::spawn(async move {
            if let Err(e) = handle_connection(stream, state).await {
                log::debug!("connection {peer}: {e}");
            }
        });
    }
}

async fn handle_connection(stream: TcpStream, state: Arc<ServerState>) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let (rd, mut wr) = stream.into_split();
    let mut rd = BufReader::new(rd);
    let mut head = [0u8; 4];
    if rd.read_exact(&mut head).await.is_err() {
        return Ok(());
    }
    if &head == b"GET " {
        return http_reply(&mut rd, &mut wr, &state).await;
    }
    let mut session = Session::new(state);
    log::info!("session {} opened", session.id);
    let mut hello = Some(session.hello());
    let mut pending = Some(read_body(&mut rd, u32::from_be_bytes(head)).await?);
    loop {
        let body = match pending.take() {
            Some(b) => b,
            None => match read_message(&mut rd).await? {
                Some(b) => b,
                None => break,
            },
        };
        let out = match parse_request(&body) {
            Err((seq, message)) => vec![Response::Error { seq, code: "bad_request".into(), message }],
            Ok(env) => {
                // Rendering and selection are CPU-bound; keep them off the
                // async workers. Messages are still handled in order.
                let (s, out) = tokio::task::spawn_blocking(move || {
                    let out = session.handle(env.seq, env.request);
                    (session, out)
                })
                .await
                .map_err(std::io::Error::other)?;
                session = s;
                out
            }
        };
        for r in hello.take().iter().chain(&out) {
            write_response(&mut wr, r).await?;
        }
    }
    log::info!("session {} closed", session.id);
    Ok(())
}

async fn http_reply<R, W>(rd: &mut R, wr: &mut W, state: &ServerState) -> std::io::Result<()>
where
    R: AsyncReadExt + Unpin,
    W: AsyncWriteExt + Unpin,
{
    // Only the request line matters; read up to its end.
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    while line.len() < 4096 && rd.read_exact(&mut byte).await.is_ok() && byte[0] != b'\n' {
        line.push(byte[0]);
    }
    let path = String::from_utf8_lossy(&line).split_whitespace().next().unwrap_or("").to_string();
    let (status, body) = if path == "/health" {
        ("200 OK", state.health().to_string())
    } else {
        ("404 Not Found", r#"{"status":"not_found"}"#.to_string())
    };
    let reply = format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    wr.write_all(reply.as_bytes()).await?;
    wr.shutdown().await
}

/// Binds `addr` and serves forever.
pub async fn run(addr: &str, state: ServerState) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    serve(listener, Arc::new(state)).await
}

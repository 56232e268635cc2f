//! Frame server: renders a read-only cloud on request over WebSocket.
//!
//! Requests are JSON text messages; responses are binary messages with a
//! little-endian layout described on [`ServerMessage`]. Each connection is
//! served by its own thread. Requests that arrive while a frame is being
//! rendered are coalesced so only the newest one is answered next.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::camera::{Camera, Orbit};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::imageio::{encode_png, BitDepth};
use crate::model::GaussianCloud;
use crate::raster::{render_with, Image, RenderSettings};

pub const PROTOCOL_VERSION: u32 = 1;

/// Id used in error messages when the request id could not be parsed.
pub const UNKNOWN_ID: u64 = u64::MAX;

const KIND_HELLO: u8 = 0;
const KIND_FRAME: u8 = 1;
const KIND_ERROR: u8 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// 8-bit grayscale PNG.
    #[default]
    Png,
    /// Row-major 8-bit samples, `width · height` bytes.
    Raw,
}

impl Encoding {
    fn tag(self) -> u8 {
        match self {
            Encoding::Png => 0,
            Encoding::Raw => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Encoding::Png),
            1 => Ok(Encoding::Raw),
            other => Err(Error::Protocol(format!("unknown encoding tag {other}"))),
        }
    }
}

/// A client request. Exactly one of `orbit` and `camera` must be set; a
/// full camera is resized to `width × height`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRequest {
    pub id: u64,
    pub t: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orbit: Option<Orbit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
    #[serde(default)]
    pub encoding: Encoding,
}

impl FrameRequest {
    pub fn orbit(id: u64, orbit: Orbit, t: f64, width: u32, height: u32) -> Self {
        Self {
            id,
            t,
            width,
            height,
            orbit: Some(orbit),
            camera: None,
            encoding: Encoding::Png,
        }
    }

    pub fn with_encoding(mut self, encoding: Encoding) -> Self {
        self.encoding = encoding;
        self
    }

    /// Checks the request against the server caps and builds its camera.
    pub fn resolve(&self, cfg: &ServerConfig) -> Result<Camera> {
        if !(0.0..=1.0).contains(&self.t) {
            return Err(Error::TimeOutOfRange(self.t));
        }
        if self.width == 0 || self.height == 0 || self.width > cfg.max_width || self.height > cfg.max_height {
            return Err(Error::Protocol(format!(
                "size {}x{} outside 1x1..{}x{}",
                self.width, self.height, cfg.max_width, cfg.max_height
            )));
        }
        let cam = match (&self.orbit, &self.camera) {
            (Some(o), None) => Camera::orbit(o, self.width, self.height)?,
            (None, Some(c)) => {
                c.validate()?;
                c.with_size(self.width, self.height)
            }
            _ => return Err(Error::Protocol("set exactly one of `orbit` and `camera`".into())),
        };
        cam.validate()?;
        Ok(cam)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResponse {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub render_ms: f32,
    pub count: u64,
    pub encoding: Encoding,
    pub payload: Vec<u8>,
}

/// Server-to-client message. Binary layout, little-endian, first byte is the
/// kind:
///
/// | kind | fields |
/// |------|--------|
/// | 0 hello | `u32` version, `u64` count, `u32` table length |
/// | 1 frame | `u64` id, `u32` width, `u32` height, `f32` render ms, `u64` count, `u8` encoding, `u32` payload length, payload |
/// | 2 error | `u64` id, `u32` message length, UTF-8 message |
#[derive(Clone, Debug, PartialEq)]
pub enum ServerMessage {
    Hello { version: u32, count: u64, table_len: u32 },
    Frame(FrameResponse),
    Error { id: u64, message: String },
}

impl ServerMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            ServerMessage::Hello { version, count, table_len } => {
                out.push(KIND_HELLO);
                out.extend_from_slice(&version.to_le_bytes());
                out.extend_from_slice(&count.to_le_bytes());
                out.extend_from_slice(&table_len.to_le_bytes());
            }
            ServerMessage::Frame(f) => {
                out.reserve(34 + f.payload.len());
                out.push(KIND_FRAME);
                out.extend_from_slice(&f.id.to_le_bytes());
                out.extend_from_slice(&f.width.to_le_bytes());
                out.extend_from_slice(&f.height.to_le_bytes());
                out.extend_from_slice(&f.render_ms.to_le_bytes());
                out.extend_from_slice(&f.count.to_le_bytes());
                out.push(f.encoding.tag());
                out.extend_from_slice(&(f.payload.len() as u32).to_le_bytes());
                out.extend_from_slice(&f.payload);
            }
            ServerMessage::Error { id, message } => {
                out.push(KIND_ERROR);
                out.extend_from_slice(&id.to_le_bytes());
                out.extend_from_slice(&(message.len() as u32).to_le_bytes());
                out.extend_from_slice(message.as_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let msg = match r.u8()? {
            KIND_HELLO => ServerMessage::Hello {
                version: r.u32()?,
                count: r.u64()?,
                table_len: r.u32()?,
            },
            KIND_FRAME => {
                let id = r.u64()?;
                let width = r.u32()?;
                let height = r.u32()?;
                let render_ms = f32::from_bits(r.u32()?);
                let count = r.u64()?;
                let encoding = Encoding::from_tag(r.u8()?)?;
                let len = r.u32()? as usize;
                ServerMessage::Frame(FrameResponse {
                    id,
                    width,
                    height,
                    render_ms,
                    count,
                    encoding,
                    payload: r.take(len)?.to_vec(),
                })
            }
            KIND_ERROR => {
                let id = r.u64()?;
                let len = r.u32()? as usize;
                let message = String::from_utf8(r.take(len)?.to_vec())
                    .map_err(|_| Error::Protocol("error message is not UTF-8".into()))?;
                ServerMessage::Error { id, message }
            }
            other => return Err(Error::Protocol(format!("unknown message kind {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Protocol(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(msg)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Protocol(format!("message truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ServerConfig {
    pub max_width: u32,
    pub max_height: u32,
    pub exec: Exec,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            max_width: 2048,
            max_height: 2048,
            exec: Exec::default(),
        }
    }
}

/// Renders one frame in `f32`. The `render` command and the server both go
/// through here, so their images agree bit for bit.
pub fn render_frame(cloud: &GaussianCloud<f32>, cam: &Camera, t: f64, exec: Exec) -> Result<Image<f32>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    render_with(cloud, cam, t as f32, RenderSettings { exec, ..RenderSettings::default() })
}

/// Renders and encodes a request.
pub fn answer(cloud: &GaussianCloud<f32>, req: &FrameRequest, cfg: &ServerConfig) -> Result<FrameResponse> {
    let cam = req.resolve(cfg)?;
    let start = Instant::now();
    let image = render_frame(cloud, &cam, req.t, cfg.exec)?;
    let payload = match req.encoding {
        Encoding::Png => encode_png(&image, BitDepth::Eight)?,
        Encoding::Raw => image.to_u8(),
    };
    Ok(FrameResponse {
        id: req.id,
        width: req.width,
        height: req.height,
        render_ms: start.elapsed().as_secs_f32() * 1e3,
        count: cloud.len() as u64,
        encoding: req.encoding,
        payload,
    })
}

fn ws_err(e: tungstenite::Error) -> Error {
    Error::Protocol(e.to_string())
}

fn is_would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if io.kind() == ErrorKind::WouldBlock)
}

/// Best-effort extraction of the id from a request that failed to parse.
fn salvage_id(text: &str) -> u64 {
    serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .and_then(|v| v.get("id").and_then(|id| id.as_u64()))
        .unwrap_or(UNKNOWN_ID)
}

enum Incoming {
    Request(std::result::Result<FrameRequest, (u64, String)>),
    Ignore,
    Closed,
}

fn classify(msg: Message) -> Incoming {
    match msg {
        Message::Text(text) => Incoming::Request(
            serde_json::from_str::<FrameRequest>(&text).map_err(|e| (salvage_id(&text), format!("malformed request: {e}"))),
        ),
        Message::Binary(_) => Incoming::Request(Err((UNKNOWN_ID, "requests must be text messages".into()))),
        Message::Close(_) => Incoming::Closed,
        _ => Incoming::Ignore,
    }
}

/// One connection: answer the first pending request, then keep only the
/// newest of whatever queued up while rendering.
fn session(mut ws: WebSocket<TcpStream>, cloud: Arc<GaussianCloud<f32>>, cfg: ServerConfig) -> Result<()> {
    let hello = ServerMessage::Hello {
        version: PROTOCOL_VERSION,
        count: cloud.len() as u64,
        table_len: cloud.table_len() as u32,
    };
    ws.send(Message::Binary(hello.encode())).map_err(ws_err)?;
    loop {
        let mut pending = None;
        while pending.is_none() {
            match ws.read() {
                Ok(msg) => match classify(msg) {
                    Incoming::Request(r) => pending = Some(r),
                    Incoming::Ignore => {}
                    Incoming::Closed => return Ok(()),
                },
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
                Err(e) => return Err(ws_err(e)),
            }
        }
        let mut next = pending;
        while let Some(request) = next.take() {
            let reply = match request {
                Ok(req) => match answer(&cloud, &req, &cfg) {
                    Ok(frame) => ServerMessage::Frame(frame),
                    Err(e) => ServerMessage::Error {
                        id: req.id,
                        message: e.to_string(),
                    },
                },
                Err((id, message)) => ServerMessage::Error { id, message },
            };
            ws.send(Message::Binary(reply.encode())).map_err(ws_err)?;
            // Drain without blocking; the newest request wins.
            ws.get_mut().set_nonblocking(true).map_err(|e| Error::Protocol(e.to_string()))?;
            let drained = loop {
                match ws.read() {
                    Ok(msg) => match classify(msg) {
                        Incoming::Request(r) => next = Some(r),
                        Incoming::Ignore => {}
                        Incoming::Closed => break Err(()),
                    },
                    Err(e) if is_would_block(&e) => break Ok(()),
                    Err(_) => break Err(()),
                }
            };
            ws.get_mut().set_nonblocking(false).map_err(|e| Error::Protocol(e.to_string()))?;
            if drained.is_err() {
                return Ok(());
            }
        }
    }
}

/// A bound, not yet running server.
pub struct Server {
    listener: TcpListener,
    cloud: Arc<GaussianCloud<f32>>,
    cfg: ServerConfig,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, cloud: GaussianCloud<f32>, cfg: ServerConfig) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::Protocol(format!("bind failed: {e}")))?;
        Ok(Self {
            listener,
            cloud: Arc::new(cloud),
            cfg,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener.local_addr().map_err(|e| Error::Protocol(e.to_string()))
    }

    /// Accepts connections forever, one thread per connection.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let _ = stream.set_nodelay(true);
            let cloud = Arc::clone(&self.cloud);
            let cfg = self.cfg;
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                let ws = match tungstenite::accept(stream) {
                    Ok(ws) => ws,
                    Err(e) => {
                        log::warn!("handshake with {peer:?} failed: {e}");
                        return;
                    }
                };
                log::info!("client {peer:?} connected");
                if let Err(e) = session(ws, cloud, cfg) {
                    log::warn!("client {peer:?}: {e}");
                }
                log::info!("client {peer:?} disconnected");
            });
        }
        Ok(())
    }

    /// Runs the acceptor on a background thread and returns its address.
    pub fn spawn(self) -> Result<SocketAddr> {
        let addr = self.local_addr()?;
        thread::spawn(move || self.run());
        Ok(addr)
    }
}

/// Blocking client, used by tests and the throughput benchmark.
pub struct Client {
    ws: WebSocket<TcpStream>,
    hello: ServerMessage,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Protocol(format!("connect to {addr}: {e}")))?;
        let _ = stream.set_nodelay(true);
        let (ws, _) = tungstenite::client(format!("ws://{addr}/"), stream).map_err(|e| Error::Protocol(e.to_string()))?;
        let mut client = Self {
            ws,
            hello: ServerMessage::Error {
                id: UNKNOWN_ID,
                message: String::new(),
            },
        };
        client.hello = client.recv()?;
        if !matches!(client.hello, ServerMessage::Hello { .. }) {
            return Err(Error::Protocol("server did not start with hello".into()));
        }
        Ok(client)
    }

    pub fn hello(&self) -> &ServerMessage {
        &self.hello
    }

    pub fn send(&mut self, req: &FrameRequest) -> Result<()> {
        self.send_text(serde_json::to_string(req)?)
    }

    pub fn send_text(&mut self, text: String) -> Result<()> {
        self.ws.send(Message::Text(text)).map_err(ws_err)
    }

    pub fn recv(&mut self) -> Result<ServerMessage> {
        loop {
            match self.ws.read().map_err(ws_err)? {
                Message::Binary(bytes) => return ServerMessage::decode(&bytes),
                Message::Close(_) => return Err(Error::Protocol("server closed the connection".into())),
                _ => {}
            }
        }
    }

    pub fn request(&mut self, req: &FrameRequest) -> Result<ServerMessage> {
        self.send(req)?;
        self.recv()
    }

    pub fn close(mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}

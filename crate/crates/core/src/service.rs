//! Length-prefixed TCP render service.
//!
//! Every frame is a big-endian `u32` payload length followed by the payload.
//! A payload is a big-endian `u32` header length, a JSON header and raw
//! binary data. Requests carry no binary data. Responses append one block
//! per requested channel in request order: RGB8 row-major for `rgb`,
//! little-endian `f32` for `depth` and `gray`.
//!
//! Each request is rendered independently: objects it does not pose sit at
//! their resting alignment.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraModel, Intrinsics};
use crate::env::EnvAssets;
use crate::raster::{render, RenderOptions};
use crate::splat::{GaussianScene, SourceLabel};
use crate::transform::episode::AlignmentChain;
use crate::transform::similarity::SimilarityTransform;
use crate::transform::{merge_scenes, transform_scene};

/// Largest accepted request payload.
pub const MAX_REQUEST_BYTES: u32 = 1 << 20;
/// Largest accepted response payload, for clients.
pub const MAX_RESPONSE_BYTES: u32 = 1 << 30;
pub const MAX_PIXELS: u64 = 4096 * 4096;
const QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("service setup: {0}")]
    Setup(String),
    #[error("server returned {code}: {message}")]
    Remote { code: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::MalformedFrame(_) => "malformed-frame",
            ServiceError::BadRequest(_) => "bad-request",
            ServiceError::UnknownObject(_) => "unknown-object",
            ServiceError::Setup(_) => "setup",
            ServiceError::Remote { .. } => "remote",
            ServiceError::Io(_) => "io",
        }
    }

    /// Whether the server drops the connection after reporting this error.
    pub fn closes_connection(&self) -> bool {
        matches!(self, ServiceError::MalformedFrame(_) | ServiceError::Io(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Rgb,
    Depth,
    Gray,
}

impl Channel {
    pub fn bytes_per_pixel(self) -> usize {
        match self {
            Channel::Rgb => 3,
            Channel::Depth | Channel::Gray => 4,
        }
    }

    pub fn format(self) -> &'static str {
        match self {
            Channel::Rgb => "rgb8",
            Channel::Depth | Channel::Gray => "f32le",
        }
    }
}

/// An object pose in the simulator frame. `quaternion` is `[w, x, y, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPose {
    pub id: String,
    pub position: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub quaternion: [f64; 4],
    #[serde(default = "unit")]
    pub scale: f64,
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

fn unit() -> f64 {
    1.0
}

fn default_channels() -> Vec<Channel> {
    vec![Channel::Rgb]
}

/// Camera center and camera-to-world quaternion `[w, x, y, z]` in the
/// environment reconstruction frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub id: u64,
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
    #[serde(default)]
    pub intrinsics: Option<Intrinsics>,
    #[serde(default)]
    pub objects: Vec<ObjectPose>,
    #[serde(default = "default_channels")]
    pub channels: Vec<Channel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDescriptor {
    pub channel: Channel,
    pub format: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub id: Option<u64>,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default)]
    pub width: u32,
    #[serde(default)]
    pub height: u32,
    #[serde(default)]
    pub channels: Vec<ChannelDescriptor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderResponse {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub payloads: Vec<(Channel, Vec<u8>)>,
}

impl RenderResponse {
    pub fn channel(&self, c: Channel) -> Option<&[u8]> {
        self.payloads.iter().find(|(k, _)| *k == c).map(|(_, b)| b.as_slice())
    }
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()
}

fn unit_quaternion(q: [f64; 4], what: &str) -> Result<UnitQuaternion<f64>, ServiceError> {
    let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
    let n = raw.norm();
    if !n.is_finite() || (n - 1.0).abs() > QUATERNION_TOLERANCE {
        return Err(ServiceError::BadRequest(format!("{what} quaternion norm {n} is not 1")));
    }
    Ok(UnitQuaternion::from_quaternion(raw))
}

fn finite(v: &[f64], what: &str) -> Result<(), ServiceError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ServiceError::BadRequest(format!("{what} is not finite")))
    }
}

struct ServiceObject {
    id: String,
    scene: GaussianScene,
    chain: AlignmentChain,
    resting: GaussianScene,
}

/// Renders requests against an immutable environment scene and object set.
pub struct RenderService {
    base: GaussianScene,
    objects: Vec<ServiceObject>,
    index: HashMap<String, usize>,
    intrinsics: Intrinsics,
    options: RenderOptions,
}

impl RenderService {
    pub fn new(assets: &EnvAssets, intrinsics: Intrinsics, options: RenderOptions) -> Result<Self, ServiceError> {
        options.validate().map_err(|e| ServiceError::Setup(e.to_string()))?;
        let mut objects = Vec::with_capacity(assets.objects.len());
        let mut index = HashMap::new();
        for obj in &assets.objects {
            let chain = *assets
                .alignments
                .get(&obj.id)
                .ok_or_else(|| ServiceError::Setup(format!("no alignment for object `{}`", obj.id)))?;
            if index.insert(obj.id.clone(), objects.len()).is_some() {
                return Err(ServiceError::Setup(format!("duplicate object id `{}`", obj.id)));
            }
            objects.push(ServiceObject {
                id: obj.id.clone(),
                resting: transform_scene(&obj.scene, &chain.resting()),
                scene: obj.scene.clone(),
                chain,
            });
        }
        Ok(Self {
            base: assets.scene.clone(),
            objects,
            index,
            intrinsics,
            options,
        })
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    pub fn options(&self) -> &RenderOptions {
        &self.options
    }

    pub fn object_ids(&self) -> impl Iterator<Item = &str> {
        self.objects.iter().map(|o| o.id.as_str())
    }

    /// Camera described by a request.
    pub fn camera(&self, request: &RenderRequest) -> Result<CameraModel, ServiceError> {
        finite(&request.position, "camera position")?;
        let q = unit_quaternion(request.quaternion, "camera")?;
        let k = request.intrinsics.unwrap_or(self.intrinsics);
        if k.width as u64 * k.height as u64 > MAX_PIXELS {
            return Err(ServiceError::BadRequest(format!("image {}x{} is too large", k.width, k.height)));
        }
        if !(k.cx.is_finite() && k.cy.is_finite()) {
            return Err(ServiceError::BadRequest("principal point is not finite".into()));
        }
        let cam = CameraModel::from_position_orientation(k, Vector3::from(request.position), q);
        cam.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        Ok(cam)
    }

    /// Scene with the request's object poses applied.
    pub fn scene_for(&self, poses: &[ObjectPose]) -> Result<GaussianScene, ServiceError> {
        let mut posed: Vec<Option<GaussianScene>> = vec![None; self.objects.len()];
        for p in poses {
            let &i = self.index.get(&p.id).ok_or_else(|| ServiceError::UnknownObject(p.id.clone()))?;
            finite(&p.position, "object position")?;
            let q = unit_quaternion(p.quaternion, "object")?;
            if !(p.scale > 0.0 && p.scale.is_finite()) {
                return Err(ServiceError::BadRequest(format!("object scale {} must be positive", p.scale)));
            }
            let pose = SimilarityTransform::from_quaternion(&q, Vector3::from(p.position), p.scale);
            let obj = &self.objects[i];
            posed[i] = Some(transform_scene(&obj.scene, &obj.chain.with_pose(&pose)));
        }
        if self.objects.is_empty() {
            return Ok(self.base.clone());
        }
        let mut parts: Vec<(&GaussianScene, SourceLabel)> = vec![(&self.base, SourceLabel::Environment)];
        for (obj, p) in self.objects.iter().zip(&posed) {
            parts.push((p.as_ref().unwrap_or(&obj.resting), SourceLabel::Object(obj.id.clone())));
        }
        merge_scenes(&parts).map_err(|e| ServiceError::BadRequest(e.to_string()))
    }

    pub fn handle(&self, request: &RenderRequest) -> Result<RenderResponse, ServiceError> {
        if request.channels.is_empty() {
            return Err(ServiceError::BadRequest("no channels requested".into()));
        }
        let camera = self.camera(request)?;
        let scene = self.scene_for(&request.objects)?;
        let out = render(&scene, &camera, &self.options);
        let payloads = request
            .channels
            .iter()
            .map(|&c| {
                let bytes = match c {
                    Channel::Rgb => out.rgb8(),
                    Channel::Depth => f32_bytes(&out.depth),
                    Channel::Gray => f32_bytes(&out.gray),
                };
                (c, bytes)
            })
            .collect();
        Ok(RenderResponse {
            id: request.id,
            width: out.width,
            height: out.height,
            payloads,
        })
    }

    /// Handles one frame payload and returns the response payload. The flag
    /// is set when the connection must be closed afterwards.
    pub fn handle_payload(&self, payload: &[u8]) -> (Vec<u8>, bool) {
        let (header, _) = match split_payload(payload) {
            Ok(parts) => parts,
            Err(e) => return (error_payload(None, &e), true),
        };
        let request: RenderRequest = match serde_json::from_slice(header) {
            Ok(r) => r,
            Err(e) => {
                // echo the id when the header is at least an object carrying one
                let id = serde_json::from_slice::<serde_json::Value>(header)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()));
                return (error_payload(id, &ServiceError::BadRequest(e.to_string())), false);
            }
        };
        match self.handle(&request) {
            Ok(resp) => (encode_response(&resp), false),
            Err(e) => (error_payload(Some(request.id), &e), e.closes_connection()),
        }
    }

    /// Serves one connection until the peer closes it or sends a malformed frame.
    pub fn serve_connection(&self, mut stream: TcpStream) -> io::Result<()> {
        loop {
            let payload = match read_frame(&mut stream, MAX_REQUEST_BYTES) {
                Ok(Some(p)) => p,
                Ok(None) => return Ok(()),
                Err(FrameError::Io(e)) => return Err(e),
                Err(FrameError::Malformed(m)) => {
                    let e = ServiceError::MalformedFrame(m);
                    // the peer may already be gone
                    let _ = write_frame(&mut stream, &error_payload(None, &e));
                    let _ = stream.shutdown(std::net::Shutdown::Both);
                    return Ok(());
                }
            };
            let (response, close) = self.handle_payload(&payload);
            write_frame(&mut stream, &response)?;
            if close {
                let _ = stream.shutdown(std::net::Shutdown::Both);
                return Ok(());
            }
        }
    }
}

/// Accepts connections forever, one thread each. Connections idle for
/// longer than `read_timeout` are dropped.
pub fn serve(listener: TcpListener, service: Arc<RenderService>, read_timeout: Option<Duration>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        stream.set_read_timeout(read_timeout)?;
        let _ = stream.set_nodelay(true);
        let service = Arc::clone(&service);
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = service.serve_connection(stream) {
                log::debug!("connection {peer:?} ended: {e}");
            }
        });
    }
    Ok(())
}

#[derive(Debug)]
enum FrameError {
    Malformed(String),
    Io(io::Error),
}

/// Reads into `buf` until it is full or the stream ends; returns bytes read.
fn read_full(stream: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match stream.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// `Ok(None)` on a clean end of stream before a frame starts.
fn read_frame(stream: &mut impl Read, max: u32) -> Result<Option<Vec<u8>>, FrameError> {
    let timed_out = |e: io::Error| match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => FrameError::Malformed("read timed out".into()),
        _ => FrameError::Io(e),
    };
    let mut len = [0u8; 4];
    match read_full(stream, &mut len).map_err(timed_out)? {
        0 => return Ok(None),
        4 => {}
        n => return Err(FrameError::Malformed(format!("length prefix truncated after {n} bytes"))),
    }
    let len = u32::from_be_bytes(len);
    if len > max {
        return Err(FrameError::Malformed(format!("declared length {len} exceeds {max}")));
    }
    let mut payload = vec![0u8; len as usize];
    let got = read_full(stream, &mut payload).map_err(timed_out)?;
    if got != payload.len() {
        return Err(FrameError::Malformed(format!("declared {len} bytes, received {got}")));
    }
    Ok(Some(payload))
}

fn write_frame(stream: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::other("frame too large"))?;
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(payload);
    stream.write_all(&buf)?;
    stream.flush()
}

/// Splits a payload into its JSON header and binary body.
fn split_payload(payload: &[u8]) -> Result<(&[u8], &[u8]), ServiceError> {
    if payload.len() < 4 {
        return Err(ServiceError::MalformedFrame(format!("payload of {} bytes has no header length", payload.len())));
    }
    let hlen = u32::from_be_bytes(payload[..4].try_into().expect("4 bytes")) as usize;
    let rest = &payload[4..];
    if hlen > rest.len() {
        return Err(ServiceError::MalformedFrame(format!("header length {hlen} exceeds payload {}", rest.len())));
    }
    Ok(rest.split_at(hlen))
}

fn join_payload(header: &[u8], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + header.len() + body.len());
    out.extend_from_slice(&(header.len() as u32).to_be_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(body);
    out
}

pub fn encode_request(request: &RenderRequest) -> Vec<u8> {
    let header = serde_json::to_vec(request).expect("request serializes");
    join_payload(&header, &[])
}

pub fn encode_response(response: &RenderResponse) -> Vec<u8> {
    let header = ResponseHeader {
        id: Some(response.id),
        status: "ok".into(),
        code: None,
        message: None,
        width: response.width,
        height: response.height,
        channels: response
            .payloads
            .iter()
            .map(|(c, b)| ChannelDescriptor {
                channel: *c,
                format: c.format().into(),
                bytes: b.len(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let body: Vec<u8> = response.payloads.iter().flat_map(|(_, b)| b.iter().copied()).collect();
    join_payload(&header, &body)
}

fn error_payload(id: Option<u64>, error: &ServiceError) -> Vec<u8> {
    let header = ResponseHeader {
        id,
        status: "error".into(),
        code: Some(error.code().into()),
        message: Some(error.to_string()),
        width: 0,
        height: 0,
        channels: Vec::new(),
    };
    join_payload(&serde_json::to_vec(&header).expect("header serializes"), &[])
}

/// Decodes a response payload. Error responses become [`ServiceError::Remote`].
pub fn decode_response(payload: &[u8]) -> Result<RenderResponse, ServiceError> {
    let (header, body) = split_payload(payload)?;
    let header: ResponseHeader =
        serde_json::from_slice(header).map_err(|e| ServiceError::MalformedFrame(format!("response header: {e}")))?;
    if header.status != "ok" {
        return Err(ServiceError::Remote {
            code: header.code.unwrap_or_default(),
            message: header.message.unwrap_or_default(),
        });
    }
    let id = header.id.ok_or_else(|| ServiceError::MalformedFrame("response without id".into()))?;
    let pixels = header.width as usize * header.height as usize;
    let mut offset = 0;
    let mut payloads = Vec::with_capacity(header.channels.len());
    for d in &header.channels {
        if d.bytes != pixels * d.channel.bytes_per_pixel() || offset + d.bytes > body.len() {
            return Err(ServiceError::MalformedFrame(format!("{:?} block of {} bytes is inconsistent", d.channel, d.bytes)));
        }
        payloads.push((d.channel, body[offset..offset + d.bytes].to_vec()));
        offset += d.bytes;
    }
    if offset != body.len() {
        return Err(ServiceError::MalformedFrame(format!("{} trailing bytes", body.len() - offset)));
    }
    Ok(RenderResponse {
        id,
        width: header.width,
        height: header.height,
        payloads,
    })
}

/// Blocking client for one connection.
pub struct RenderClient {
    stream: TcpStream,
}

impl RenderClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn request(&mut self, request: &RenderRequest) -> Result<RenderResponse, ServiceError> {
        self.send_raw(&encode_request(request))?;
        decode_response(&self.read_payload()?)
    }

    /// Writes `payload` as one frame.
    pub fn send_raw(&mut self, payload: &[u8]) -> io::Result<()> {
        write_frame(&mut self.stream, payload)
    }

    /// Writes bytes with no framing.
    pub fn send_bytes(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.stream.write_all(bytes)?;
        self.stream.flush()
    }

    /// Signals that no more requests follow.
    pub fn finish_writing(&self) -> io::Result<()> {
        self.stream.shutdown(std::net::Shutdown::Write)
    }

    pub fn read_payload(&mut self) -> Result<Vec<u8>, ServiceError> {
        match read_frame(&mut self.stream, MAX_RESPONSE_BYTES) {
            Ok(Some(p)) => Ok(p),
            Ok(None) => Err(ServiceError::Io(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"))),
            Err(FrameError::Malformed(m)) => Err(ServiceError::MalformedFrame(m)),
            Err(FrameError::Io(e)) => Err(ServiceError::Io(e)),
        }
    }

    /// Reads the next response header, for error inspection.
    pub fn read_header(&mut self) -> Result<ResponseHeader, ServiceError> {
        let payload = self.read_payload()?;
        let (header, _) = split_payload(&payload)?;
        serde_json::from_slice(header).map_err(|e| ServiceError::MalformedFrame(format!("response header: {e}")))
    }
}

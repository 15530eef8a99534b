//! Client for external encoders speaking the newline-delimited JSON bridge
//! protocol.
//!
//! Each request is one JSON object per line:
//!
//! ```text
//! {"protocol_version":1,"id":7,"sample_rate_hz":16000,"samples":"<base64 f32le>"}
//! ```
//!
//! and each response is either
//!
//! ```text
//! {"protocol_version":1,"id":7,"T":98,"D":768,"frames":"<base64 f32le, row-major T x D>"}
//! {"protocol_version":1,"id":7,"error":"..."}
//! ```
//!
//! The bridge never resamples; the client checks the rate before sending.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Encoder, FrameEmbeddings};
use crate::band::BandSignal;
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub protocol_version: u32,
    pub id: u64,
    pub sample_rate_hz: u32,
    pub samples: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    #[serde(default)]
    pub protocol_version: Option<u32>,
    #[serde(default)]
    pub id: Option<u64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub frame_count: Option<usize>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Base64 of the values as little-endian 32-bit floats.
pub fn encode_f32_base64(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32_base64(payload: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(payload.trim())
        .map_err(|e| Error::Bridge(format!("decode: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Bridge(format!(
            "decode: payload of {} bytes is not a whole number of f32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
    // keeps a spawned bridge process alive for the connection's lifetime
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Encoder backed by an external bridge process. Requests on one connection
/// are serialised.
pub struct BridgeEncoder {
    endpoint: String,
    sample_rate_hz: u32,
    context_samples: usize,
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for BridgeEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeEncoder")
            .field("endpoint", &self.endpoint)
            .field("sample_rate_hz", &self.sample_rate_hz)
            .finish()
    }
}

impl BridgeEncoder {
    /// Wraps an already-open byte stream pair.
    pub fn from_streams(
        endpoint: impl Into<String>,
        sample_rate_hz: u32,
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            sample_rate_hz,
            context_samples: 10 * sample_rate_hz as usize,
            conn: Mutex::new(Connection {
                reader: Box::new(reader),
                writer: Box::new(writer),
                next_id: 1,
                child: None,
            }),
        }
    }

    /// Connects to `tcp://host:port` or spawns `stdio:<command line>`.
    pub fn connect(endpoint: &str, sample_rate_hz: u32) -> Result<Self> {
        if let Some(addr) = endpoint.strip_prefix("tcp://") {
            let stream = TcpStream::connect(addr).map_err(|e| Error::Bridge(format!("connect {addr}: {e}")))?;
            let read_half = stream
                .try_clone()
                .map_err(|e| Error::Bridge(format!("connect {addr}: {e}")))?;
            Ok(Self::from_streams(endpoint, sample_rate_hz, BufReader::new(read_half), stream))
        } else if let Some(cmd) = endpoint.strip_prefix("stdio:") {
            let mut parts = cmd.split_whitespace();
            let program = parts
                .next()
                .ok_or_else(|| Error::Invalid("empty bridge command".into()))?;
            let mut child = Command::new(program)
                .args(parts)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| Error::Bridge(format!("spawn {program}: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let enc = Self::from_streams(endpoint, sample_rate_hz, BufReader::new(stdout), stdin);
            enc.conn.lock().expect("fresh mutex").child = Some(child);
            Ok(enc)
        } else {
            Err(Error::Invalid(format!(
                "bridge endpoint {endpoint:?} must start with tcp:// or stdio:"
            )))
        }
    }

    pub fn with_context_seconds(mut self, seconds: f64) -> Self {
        self.context_samples = ((seconds * self.sample_rate_hz as f64).round() as usize).max(1);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn round_trip(&self, band: &BandSignal) -> Result<FrameEmbeddings> {
        let mut conn = self.conn.lock().map_err(|_| Error::Bridge("connection poisoned".into()))?;
        let id = conn.next_id;
        conn.next_id += 1;
        let request = BridgeRequest {
            protocol_version: PROTOCOL_VERSION,
            id,
            sample_rate_hz: band.sample_rate_hz,
            samples: encode_f32_base64(&band.samples),
        };
        let mut line = serde_json::to_string(&request)?;
        line.push('\n');
        let io_err = |e: std::io::Error| Error::Bridge(format!("{}: {e}", self.endpoint));
        conn.writer.write_all(line.as_bytes()).map_err(io_err)?;
        conn.writer.flush().map_err(io_err)?;

        let mut reply = String::new();
        if conn.reader.read_line(&mut reply).map_err(io_err)? == 0 {
            return Err(Error::Bridge(format!("{}: connection closed", self.endpoint)));
        }
        let response: BridgeResponse = serde_json::from_str(&reply)
            .map_err(|e| Error::Bridge(format!("malformed response: {e}")))?;
        if let Some(msg) = response.error {
            return Err(Error::Bridge(format!("request {id}: {msg}")));
        }
        if response.id != Some(id) {
            return Err(Error::Bridge(format!(
                "response id {:?} does not match request {id}",
                response.id
            )));
        }
        let (t, d) = response
            .frame_count
            .zip(response.dim)
            .ok_or_else(|| Error::Bridge("response lacks T/D".into()))?;
        let frames = decode_f32_base64(response.frames.as_deref().unwrap_or(""))?;
        if frames.len() != t * d || t == 0 || d == 0 {
            return Err(Error::Bridge(format!(
                "payload holds {} values, header says {t} x {d}",
                frames.len()
            )));
        }
        let frame_rate = t as f64 / band.duration_s();
        FrameEmbeddings::new(frames, d, frame_rate, band.band_index)
            .map_err(|e| Error::Bridge(format!("invalid frames: {e}")))
    }
}

impl Encoder for BridgeEncoder {
    fn id(&self) -> String {
        format!("bridge:{}@{}", self.endpoint, self.sample_rate_hz)
    }

    fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    fn context_samples(&self) -> usize {
        self.context_samples
    }

    fn encode(&self, band: &BandSignal) -> Result<FrameEmbeddings> {
        if band.sample_rate_hz != self.sample_rate_hz {
            return Err(Error::RateMismatch {
                expected: self.sample_rate_hz,
                actual: band.sample_rate_hz,
            });
        }
        self.round_trip(band)
    }
}

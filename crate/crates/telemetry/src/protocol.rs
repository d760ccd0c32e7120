//! Message envelope `{type, seq, v, payload}`.
//!
//! Map layers travel as base64 strings of little-endian `f32` values in
//! row-major order. Unknown cells are encoded as `-1`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on accepted message text.
pub const MAX_MESSAGE_BYTES: usize = 8 << 20;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported schema version {0}")]
    Version(u32),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("bad payload for `{kind}`: {reason}")]
    Payload { kind: &'static str, reason: String },
    #[error("layer `{0}` does not match the declared dimensions")]
    LayerSize(&'static str),
    #[error("message exceeds {MAX_MESSAGE_BYTES} bytes")]
    TooLarge,
}

/// Row-major `f32` values; serialized as base64 of their LE bytes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layer(pub Vec<f32>);

impl Layer {
    pub fn from_f64(values: &[f64]) -> Self {
        Self(values.iter().map(|&v| v as f32).collect())
    }

    pub fn to_base64(&self) -> String {
        let mut bytes = Vec::with_capacity(self.0.len() * 4);
        for v in &self.0 {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        STANDARD.encode(bytes)
    }

    pub fn from_base64(s: &str) -> Result<Self, String> {
        let bytes = STANDARD.decode(s).map_err(|e| e.to_string())?;
        if bytes.len() % 4 != 0 {
            return Err(format!("{} bytes is not a whole number of f32 values", bytes.len()));
        }
        Ok(Self(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()))
    }
}

impl Serialize for Layer {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for Layer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Layer::from_base64(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapLayers {
    pub width: u32,
    pub height: u32,
    pub cell_size: f64,
    pub gt: Layer,
    pub fused: Layer,
    pub confidence: Layer,
    pub sdf: Layer,
}

impl MapLayers {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let n = self.width as usize * self.height as usize;
        for (name, layer) in [("gt", &self.gt), ("fused", &self.fused), ("confidence", &self.confidence), ("sdf", &self.sdf)] {
            if layer.0.len() != n {
                return Err(ProtocolError::LayerSize(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentOverlay {
    pub id: u32,
    pub trav: f32,
    pub confidence: f32,
    pub traversable: bool,
    /// `[x, y]` grid cells.
    pub cells: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricPoint {
    pub step: u64,
    pub l_total: f64,
    pub l_trav: f64,
    pub l_reco: f64,
    pub val_acc: Option<f64>,
}

/// Operator-tunable values currently in effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub k_sigma: f64,
    pub target_fpr: f64,
    pub sigmoid_k: f64,
    pub sigmoid_vthr: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self { k_sigma: 2.0, target_fpr: 0.15, sigmoid_k: 10.0, sigmoid_vthr: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSnapshot {
    pub tick: u64,
    pub time: f64,
    /// `[x, y, yaw]`.
    pub pose: [f64; 3],
    /// Achieved body-frame velocity.
    pub velocity: [f64; 2],
    pub score: f64,
    pub drive_mode: String,
    pub paused: bool,
    pub layers: MapLayers,
    pub segments: Vec<SegmentOverlay>,
    pub metrics: Vec<MetricPoint>,
    pub tau_thr: f64,
    pub mu_pos: f64,
    pub sigma_pos: f64,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorCommand {
    Twist { vx: f64, vy: f64, yaw_rate: f64 },
    SetMode { mode: String },
    SetParam { key: String, value: f64 },
    Pause,
    Resume,
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {
    /// `seq` of the acknowledged command.
    pub command_seq: u64,
    /// Simulation tick at which the command took effect.
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Nack {
    pub command_seq: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Snapshot(Box<StateSnapshot>),
    Command(OperatorCommand),
    Ack(Ack),
    Nack(Nack),
}

impl Body {
    pub fn type_name(&self) -> &'static str {
        match self {
            Body::Snapshot(_) => "snapshot",
            Body::Command(_) => "command",
            Body::Ack(_) => "ack",
            Body::Nack(_) => "nack",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub seq: u64,
    pub body: Body,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    #[serde(rename = "type")]
    kind: String,
    seq: u64,
    v: u32,
    payload: Value,
}

pub fn encode(env: &Envelope) -> Result<String, ProtocolError> {
    let payload = match &env.body {
        Body::Snapshot(s) => serde_json::to_value(s),
        Body::Command(c) => serde_json::to_value(c),
        Body::Ack(a) => serde_json::to_value(a),
        Body::Nack(n) => serde_json::to_value(n),
    }
    .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let raw = Raw { kind: env.body.type_name().into(), seq: env.seq, v: PROTOCOL_VERSION, payload };
    serde_json::to_string(&raw).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// Decodes and validates one message. The envelope is checked before the
/// payload, so a bad payload still reports a usable `seq` via
/// [`decode_seq`].
pub fn decode(text: &str) -> Result<Envelope, ProtocolError> {
    if text.len() > MAX_MESSAGE_BYTES {
        return Err(ProtocolError::TooLarge);
    }
    let raw: Raw = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if raw.v != PROTOCOL_VERSION {
        return Err(ProtocolError::Version(raw.v));
    }
    fn payload<T: serde::de::DeserializeOwned>(kind: &'static str, v: Value) -> Result<T, ProtocolError> {
        serde_json::from_value(v).map_err(|e| ProtocolError::Payload { kind, reason: e.to_string() })
    }
    let body = match raw.kind.as_str() {
        "snapshot" => {
            let s: StateSnapshot = payload("snapshot", raw.payload)?;
            s.layers.validate()?;
            Body::Snapshot(Box::new(s))
        }
        "command" => Body::Command(payload("command", raw.payload)?),
        "ack" => Body::Ack(payload("ack", raw.payload)?),
        "nack" => Body::Nack(payload("nack", raw.payload)?),
        other => return Err(ProtocolError::UnknownType(other.to_owned())),
    };
    Ok(Envelope { seq: raw.seq, body })
}

/// The `seq` field of a message whose payload may be invalid.
pub fn decode_seq(text: &str) -> Option<u64> {
    if text.len() > MAX_MESSAGE_BYTES {
        return None;
    }
    serde_json::from_str::<Value>(text).ok()?.get("seq")?.as_u64()
}

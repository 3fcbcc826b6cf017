//! Messages exchanged with the live client, one JSON object per WebSocket
//! text frame. Every message carries `"v": 1` and a `"type"` tag. The full
//! catalogue is in `docs/wire-protocol.md`.

use ballbowl_core::task::{Flag, Workspace};
use serde::{Deserialize, Serialize};

pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Join {
        #[serde(default)]
        subject: Option<String>,
    },
    /// Either a pointer target (`target` + `lift`) or a raw `force`.
    Input {
        #[serde(default)]
        target: Option<[f64; 2]>,
        #[serde(default)]
        lift: bool,
        #[serde(default)]
        force: Option<[f64; 3]>,
        /// Trial time at which to apply the input; immediate when absent.
        #[serde(default)]
        at: Option<f64>,
    },
    StartTrial,
    /// End the running trial early (logged invalid) and idle.
    Rest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        subject: String,
        snapshot_rate: f64,
        physics_dt: f64,
        record_rate: f64,
        workspace: Workspace,
        pendulum_length: f64,
        rim_angle: f64,
        total_trials: usize,
        next_trial: usize,
    },
    Snapshot(Snapshot),
    TrialComplete(TrialSummary),
    Error {
        code: ErrorCode,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Strictly increasing per connection.
    pub seq: u64,
    pub active: bool,
    /// Trial time (s); 0 while idle.
    pub t: f64,
    pub time_remaining: f64,
    pub trial_index: u32,
    pub set_index: u32,
    pub bowl: [f64; 3],
    pub lifted: bool,
    pub ball: [f64; 2],
    pub in_bowl: bool,
    pub eligible: bool,
    pub collected: usize,
    pub task_time: f64,
    pub remaining: Vec<Flag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial_index: u32,
    pub set_index: u32,
    pub flags_collected: usize,
    pub task_time: f64,
    pub duration: f64,
    pub time_per_target: Option<f64>,
    pub valid: bool,
    pub fault: Option<String>,
    /// Archive-relative path of the written log.
    pub file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Another player already holds the session.
    SessionFull,
    Malformed,
    UnsupportedVersion,
    NotJoined,
    AlreadyJoined,
    TrialActive,
    NoActiveTrial,
    ProtocolComplete,
    Internal,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

pub fn encode(msg: &ServerMessage) -> String {
    serde_json::to_string(&Envelope { v: WIRE_VERSION, body: msg }).expect("server messages always serialize")
}

pub fn encode_client(msg: &ClientMessage) -> String {
    serde_json::to_string(&Envelope { v: WIRE_VERSION, body: msg }).expect("client messages always serialize")
}

/// Why an incoming frame was refused.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub code: ErrorCode,
    pub message: String,
}

impl Rejection {
    pub fn into_message(self) -> ServerMessage {
        ServerMessage::Error { code: self.code, message: self.message }
    }
}

fn reject(code: ErrorCode, message: impl Into<String>) -> Rejection {
    Rejection { code, message: message.into() }
}

pub fn decode_client(text: &str) -> Result<ClientMessage, Rejection> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| reject(ErrorCode::Malformed, format!("not JSON: {e}")))?;
    match value.get("v").and_then(serde_json::Value::as_u64) {
        Some(v) if v == WIRE_VERSION as u64 => {}
        Some(v) => return Err(reject(ErrorCode::UnsupportedVersion, format!("version {v}, server speaks {WIRE_VERSION}"))),
        None => return Err(reject(ErrorCode::Malformed, "missing numeric \"v\" field")),
    }
    let env: Envelope<ClientMessage> =
        serde_json::from_value(value).map_err(|e| reject(ErrorCode::Malformed, e.to_string()))?;
    let msg = env.body;
    if let ClientMessage::Input { target, force, at, .. } = &msg {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match (target, force) {
            (Some(_), Some(_)) => return Err(reject(ErrorCode::Malformed, "input has both target and force")),
            (Some(t), None) if !finite(t) => return Err(reject(ErrorCode::Malformed, "non-finite target")),
            (None, Some(f)) if !finite(f) => return Err(reject(ErrorCode::Malformed, "non-finite force")),
            _ => {}
        }
        if at.is_some_and(|a| !(a >= 0.0 && a.is_finite())) {
            return Err(reject(ErrorCode::Malformed, "\"at\" must be a non-negative trial time"));
        }
    }
    Ok(msg)
}

pub fn decode_server(text: &str) -> Result<ServerMessage, String> {
    let env: Envelope<ServerMessage> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if env.v != WIRE_VERSION {
        return Err(format!("unsupported version {}", env.v));
    }
    Ok(env.body)
}

//! WebSocket wire protocol: one JSON object per text frame, discriminated by
//! `type`.
//!
//! Client to server: `hello`, `command`, `control`.
//! Server to client: `hello`, `telemetry`, `event`, `ack`, `error`.
//!
//! A session opens with the client's `hello` (protocol version and role);
//! the server answers with its own `hello` carrying the session id and the
//! role actually granted. Angles on the wire are degrees.

use magbot_core::simulator::{SimEvent, TorqueDemand};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    Command(CommandMessage),
    Control(ControlMessage),
    Telemetry(Box<TelemetryMessage>),
    Event(EventMessage),
    Ack(Ack),
    Error(ErrorMessage),
}

impl Message {
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialise")
    }

    pub fn decode(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// The single session whose commands drive the robot.
    Driver,
    Observer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub version: u32,
    pub role: Role,
    /// Assigned by the server.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<ServerInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerInfo {
    pub dt: f64,
    pub telemetry_hz: f64,
    pub v_max: f64,
    pub max_angle_deg: f64,
    pub patches: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandMessage {
    /// Strictly increasing within a session.
    pub seq: u64,
    /// 1: one wheel steered at a time; 2: both wheels steer.
    pub mode: u8,
    pub delta_front_deg: f64,
    pub delta_back_deg: f64,
    pub v_back: f64,
    /// Omitted: the front speed follows from the rolling constraints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_front: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlVerb {
    Pause,
    Resume,
    Reset,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlMessage {
    pub seq: u64,
    pub verb: ControlVerb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryPose {
    pub patch: String,
    pub u: f64,
    pub v: f64,
    pub heading: f64,
    pub roll: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryMessage {
    pub time: f64,
    pub step: u64,
    pub paused: bool,
    pub pose: TelemetryPose,
    pub delta_front_deg: f64,
    pub delta_back_deg: f64,
    pub v_back: f64,
    pub v_front: f64,
    /// Tip-over margin; `null` when no tipping mode is loaded.
    pub margin: Option<f64>,
    /// Torque demand as a fraction of actuator capacity.
    pub torque: TorqueDemand,
    /// Events since the previous telemetry message.
    pub events: Vec<SimEvent>,
    pub markers: usize,
    /// Last command sequence number applied.
    pub applied_seq: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventMessage {
    pub event: SimEvent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    OutOfRange,
    InvalidMode,
    /// Sequence number not above the last accepted one; the message is ignored.
    StaleSeq,
    NotDriver,
    DriverTaken,
    Version,
    NoSession,
    /// The simulator refused a step; stepping halts until a reset.
    Simulation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub code: ErrorCode,
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    /// Offending field, when one is to blame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl ErrorMessage {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            severity: Severity::Error,
            seq: None,
            field: None,
            message: message.into(),
        }
    }

    pub fn field(mut self, field: &str) -> Self {
        self.field = Some(field.into());
        self
    }

    pub fn seq(mut self, seq: u64) -> Self {
        self.seq = Some(seq);
        self
    }

    pub fn warning(mut self) -> Self {
        self.severity = Severity::Warning;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_wire_format() {
        let text = r#"{"type":"command","seq":3,"mode":2,"delta_front_deg":10,"delta_back_deg":-10,"v_back":0.1}"#;
        let m = Message::decode(text).unwrap();
        assert_eq!(
            m,
            Message::Command(CommandMessage {
                seq: 3,
                mode: 2,
                delta_front_deg: 10.0,
                delta_back_deg: -10.0,
                v_back: 0.1,
                v_front: None
            })
        );
        assert_eq!(Message::decode(&m.encode()).unwrap(), m);
    }

    #[test]
    fn unknown_type_is_rejected() {
        assert!(Message::decode(r#"{"type":"teleport"}"#).is_err());
        assert!(Message::decode(r#"{"seq":1}"#).is_err());
    }

    #[test]
    fn error_reply_shape() {
        let e = Message::Error(
            ErrorMessage::new(ErrorCode::StaleSeq, "ignored")
                .seq(5)
                .warning(),
        );
        let v: serde_json::Value = serde_json::from_str(&e.encode()).unwrap();
        assert_eq!(v["type"], "error");
        assert_eq!(v["code"], "stale_seq");
        assert_eq!(v["severity"], "warning");
        assert_eq!(v["seq"], 5);
    }
}

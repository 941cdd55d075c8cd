//! Per-connection command handling, independent of the transport.

use magbot_core::kinematics::{Mode, SteeringState};
use magbot_core::simulator::Command;

use crate::protocol::{
    Ack, CommandMessage, ControlMessage, ErrorCode, ErrorMessage, Message, Role,
};

/// Command validation limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Limits {
    pub v_max: f64,
    pub max_angle_deg: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            v_max: magbot_core::kinematics::V_MAX,
            max_angle_deg: 90.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Session {
    pub id: u64,
    pub role: Role,
    /// Highest sequence number accepted so far.
    pub last_seq: Option<u64>,
}

/// Result of handling one client message.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    /// Reply only.
    Reply(Message),
    /// Reply, and hand the validated command to the simulation loop.
    Apply(Message, Command),
    /// Reply, and forward the control request.
    Control(Message, ControlMessage),
}

impl Outcome {
    pub fn reply(&self) -> &Message {
        match self {
            Outcome::Reply(m) | Outcome::Apply(m, _) | Outcome::Control(m, _) => m,
        }
    }
}

fn check_angle(field: &str, value: f64, limits: &Limits, seq: u64) -> Result<f64, ErrorMessage> {
    if !value.is_finite() || value.abs() > limits.max_angle_deg {
        let m = limits.max_angle_deg;
        return Err(ErrorMessage::new(
            ErrorCode::OutOfRange,
            format!("{field} must be in [-{m}, {m}] (got {value})"),
        )
        .field(field)
        .seq(seq));
    }
    Ok(value.to_radians())
}

fn check_speed(field: &str, value: f64, limits: &Limits, seq: u64) -> Result<f64, ErrorMessage> {
    if !value.is_finite() || value.abs() > limits.v_max {
        let m = limits.v_max;
        return Err(ErrorMessage::new(
            ErrorCode::OutOfRange,
            format!("{field} must be in [-{m}, {m}] m/s (got {value})"),
        )
        .field(field)
        .seq(seq));
    }
    Ok(value)
}

/// Field and mode checks, producing the simulator command.
pub fn validate_command(msg: &CommandMessage, limits: &Limits) -> Result<Command, ErrorMessage> {
    let seq = msg.seq;
    let mode = match msg.mode {
        1 => Mode::One,
        2 => Mode::Two,
        m => {
            return Err(ErrorMessage::new(
                ErrorCode::InvalidMode,
                format!("mode must be 1 or 2 (got {m})"),
            )
            .field("mode")
            .seq(seq))
        }
    };
    let delta_front = check_angle("delta_front_deg", msg.delta_front_deg, limits, seq)?;
    let delta_back = check_angle("delta_back_deg", msg.delta_back_deg, limits, seq)?;
    let v_back = check_speed("v_back", msg.v_back, limits, seq)?;
    let v_front = msg
        .v_front
        .map(|v| check_speed("v_front", v, limits, seq))
        .transpose()?;
    if !mode.admits(&SteeringState::new(delta_front, delta_back)) {
        return Err(ErrorMessage::new(
            ErrorCode::InvalidMode,
            "mode 1 steers one wheel at a time: one angle must be 0",
        )
        .field("mode")
        .seq(seq));
    }
    Ok(Command {
        delta_front,
        delta_back,
        v_back,
        v_front,
    })
}

impl Session {
    pub fn new(id: u64, role: Role) -> Self {
        Self {
            id,
            role,
            last_seq: None,
        }
    }

    fn sequence(&mut self, seq: u64) -> Result<(), ErrorMessage> {
        if self.role != Role::Driver {
            return Err(ErrorMessage::new(
                ErrorCode::NotDriver,
                "observer sessions cannot command the robot",
            )
            .seq(seq));
        }
        if self.last_seq.is_some_and(|last| seq <= last) {
            let last = self.last_seq.unwrap_or_default();
            return Err(ErrorMessage::new(
                ErrorCode::StaleSeq,
                format!("seq {seq} is not above {last}; ignored"),
            )
            .field("seq")
            .seq(seq)
            .warning());
        }
        Ok(())
    }

    /// Validates a command. Accepted commands advance `last_seq`; rejected
    /// ones leave the session unchanged.
    pub fn handle_command(&mut self, msg: &CommandMessage, limits: &Limits) -> Outcome {
        let checked = self
            .sequence(msg.seq)
            .and_then(|_| validate_command(msg, limits));
        match checked {
            Ok(cmd) => {
                self.last_seq = Some(msg.seq);
                Outcome::Apply(Message::Ack(Ack { seq: msg.seq }), cmd)
            }
            Err(e) => Outcome::Reply(Message::Error(e)),
        }
    }

    pub fn handle_control(&mut self, msg: &ControlMessage) -> Outcome {
        match self.sequence(msg.seq) {
            Ok(()) => {
                self.last_seq = Some(msg.seq);
                Outcome::Control(Message::Ack(Ack { seq: msg.seq }), *msg)
            }
            Err(e) => Outcome::Reply(Message::Error(e)),
        }
    }

    /// Dispatches a decoded client frame.
    pub fn handle_message(&mut self, msg: &Message, limits: &Limits) -> Outcome {
        match msg {
            Message::Command(c) => self.handle_command(c, limits),
            Message::Control(c) => self.handle_control(c),
            Message::Hello(_) => Outcome::Reply(Message::Error(ErrorMessage::new(
                ErrorCode::Malformed,
                "session already established",
            ))),
            _ => Outcome::Reply(Message::Error(ErrorMessage::new(
                ErrorCode::Malformed,
                "clients may send only command and control messages",
            ))),
        }
    }

    /// Decodes and dispatches a raw text frame.
    pub fn handle_text(&mut self, text: &str, limits: &Limits) -> Outcome {
        match Message::decode(text) {
            Ok(m) => self.handle_message(&m, limits),
            Err(e) => {
                let text = e.to_string();
                let mut err = ErrorMessage::new(ErrorCode::Malformed, text.clone());
                // serde names the field between backticks.
                if let Some(name) = text
                    .strip_prefix("missing field `")
                    .and_then(|r| r.split('`').next())
                {
                    err = err.field(name);
                }
                Outcome::Reply(Message::Error(err))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ControlVerb, Severity};

    fn cmd(seq: u64) -> CommandMessage {
        CommandMessage {
            seq,
            mode: 2,
            delta_front_deg: 10.0,
            delta_back_deg: 10.0,
            v_back: 0.1,
            v_front: None,
        }
    }

    fn driver() -> Session {
        Session::new(1, Role::Driver)
    }

    fn error(o: &Outcome) -> &ErrorMessage {
        match o.reply() {
            Message::Error(e) => e,
            m => panic!("expected an error, got {m:?}"),
        }
    }

    #[test]
    fn valid_command_is_acked() {
        let mut s = driver();
        let out = s.handle_command(&cmd(1), &Limits::default());
        let Outcome::Apply(Message::Ack(a), c) = out else {
            panic!("{out:?}")
        };
        assert_eq!(a.seq, 1);
        assert_eq!(c.delta_front, 10f64.to_radians());
        assert_eq!(s.last_seq, Some(1));
    }

    #[test]
    fn out_of_range_angle_names_field() {
        let mut s = driver();
        let out = s.handle_command(
            &CommandMessage {
                delta_front_deg: 120.0,
                ..cmd(1)
            },
            &Limits::default(),
        );
        let e = error(&out);
        assert_eq!(e.code, ErrorCode::OutOfRange);
        assert_eq!(e.field.as_deref(), Some("delta_front_deg"));
        assert!(e.message.contains("[-90, 90]"), "{}", e.message);
        assert_eq!(s.last_seq, None);
    }

    #[test]
    fn stale_seq_is_a_warning() {
        let mut s = driver();
        s.handle_command(&cmd(7), &Limits::default());
        let out = s.handle_command(&cmd(5), &Limits::default());
        let e = error(&out);
        assert_eq!(
            (e.code, e.severity, e.seq),
            (ErrorCode::StaleSeq, Severity::Warning, Some(5))
        );
        assert_eq!(s.last_seq, Some(7));
        assert!(matches!(
            s.handle_command(&cmd(7), &Limits::default()),
            Outcome::Reply(_)
        ));
        assert!(matches!(
            s.handle_command(&cmd(8), &Limits::default()),
            Outcome::Apply(..)
        ));
    }

    #[test]
    fn speed_limit_and_non_finite() {
        let mut s = driver();
        let e = s.handle_command(
            &CommandMessage {
                v_back: 0.3,
                ..cmd(1)
            },
            &Limits::default(),
        );
        assert_eq!(error(&e).field.as_deref(), Some("v_back"));
        let e = s.handle_command(
            &CommandMessage {
                v_front: Some(f64::NAN),
                ..cmd(2)
            },
            &Limits::default(),
        );
        assert_eq!(error(&e).field.as_deref(), Some("v_front"));
    }

    #[test]
    fn mode_one_needs_a_straight_wheel() {
        let mut s = driver();
        let out = s.handle_command(&CommandMessage { mode: 1, ..cmd(1) }, &Limits::default());
        assert_eq!(error(&out).code, ErrorCode::InvalidMode);
        let ok = CommandMessage {
            mode: 1,
            delta_back_deg: 0.0,
            ..cmd(2)
        };
        assert!(matches!(
            s.handle_command(&ok, &Limits::default()),
            Outcome::Apply(..)
        ));
        let bad = CommandMessage { mode: 3, ..cmd(3) };
        assert_eq!(
            error(&s.handle_command(&bad, &Limits::default()))
                .field
                .as_deref(),
            Some("mode")
        );
    }

    #[test]
    fn observers_cannot_drive() {
        let mut s = Session::new(2, Role::Observer);
        assert_eq!(
            error(&s.handle_command(&cmd(1), &Limits::default())).code,
            ErrorCode::NotDriver
        );
        let ctl = ControlMessage {
            seq: 1,
            verb: ControlVerb::Pause,
        };
        assert_eq!(error(&s.handle_control(&ctl)).code, ErrorCode::NotDriver);
    }

    #[test]
    fn malformed_text() {
        let mut s = driver();
        assert_eq!(
            error(&s.handle_text("{not json", &Limits::default())).code,
            ErrorCode::Malformed
        );
        let missing = r#"{"type":"command","seq":1,"mode":2}"#;
        let out = s.handle_text(missing, &Limits::default());
        assert_eq!(error(&out).code, ErrorCode::Malformed);
        assert_eq!(error(&out).field.as_deref(), Some("delta_front_deg"));
    }
}

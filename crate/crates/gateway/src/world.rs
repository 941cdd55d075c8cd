//! The simulation loop's state and the session log it writes.
//!
//! A session log is JSONL: a `header` record carrying the full scenario,
//! then `command` and `control` records stamped with the number of steps
//! taken before they apply, then an `end` record with the step count and
//! trajectory hash. Replaying the records against the scenario reproduces
//! the trajectory bit for bit.

use std::io::{BufRead, Write};

use anyhow::{bail, Context};
use magbot_core::scenario::read_jsonl;
use magbot_core::simulator::{
    Command, RobotState, Scenario, SimEvent, Simulator, TrajectoryHasher,
};
use serde::{Deserialize, Serialize};

use crate::protocol::{ControlVerb, TelemetryMessage, TelemetryPose, PROTOCOL_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        version: u32,
        scenario: Box<Scenario>,
    },
    Command {
        step: u64,
        seq: u64,
        command: Command,
    },
    Control {
        step: u64,
        verb: ControlVerb,
    },
    End {
        steps: u64,
        states: usize,
        trajectory_hash: String,
    },
}

pub struct World {
    scenario: Scenario,
    sim: Simulator,
    desired: Command,
    applied_seq: Option<u64>,
    paused: bool,
    steps: u64,
    hasher: TrajectoryHasher,
    pending_events: Vec<SimEvent>,
    markers: usize,
    log: Option<Box<dyn Write + Send>>,
}

impl World {
    pub fn new(scenario: Scenario, log: Option<Box<dyn Write + Send>>) -> anyhow::Result<Self> {
        let sim = Simulator::from_scenario(&scenario)?;
        let mut hasher = TrajectoryHasher::new();
        hasher.push(sim.state());
        let mut w = Self {
            scenario,
            sim,
            desired: Command::default(),
            applied_seq: None,
            paused: false,
            steps: 0,
            hasher,
            pending_events: Vec::new(),
            markers: 0,
            log,
        };
        w.record(&LogRecord::Header {
            version: PROTOCOL_VERSION,
            scenario: Box::new(w.scenario.clone()),
        })?;
        Ok(w)
    }

    fn record(&mut self, r: &LogRecord) -> anyhow::Result<()> {
        if let Some(log) = self.log.as_mut() {
            serde_json::to_writer(&mut *log, r)?;
            log.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn state(&self) -> &RobotState {
        self.sim.state()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    /// Marker count reported in telemetry.
    pub fn set_markers(&mut self, n: usize) {
        self.markers = n;
    }

    pub fn trajectory_hash(&self) -> String {
        self.hasher.hex()
    }

    /// Replaces the desired command; it applies from the next step on.
    pub fn set_command(&mut self, seq: u64, command: Command) -> anyhow::Result<()> {
        self.desired = command;
        self.applied_seq = Some(seq);
        self.record(&LogRecord::Command {
            step: self.steps,
            seq,
            command,
        })
    }

    pub fn control(&mut self, verb: ControlVerb) -> anyhow::Result<()> {
        match verb {
            ControlVerb::Pause => self.paused = true,
            ControlVerb::Resume => self.paused = false,
            ControlVerb::Reset => {
                self.sim.reset();
                self.desired = Command::default();
                self.hasher.push(self.sim.state());
            }
        }
        self.record(&LogRecord::Control {
            step: self.steps,
            verb,
        })
    }

    /// Advances one step unless paused; returns the step's events.
    pub fn tick(&mut self) -> anyhow::Result<Vec<SimEvent>> {
        if self.paused {
            return Ok(Vec::new());
        }
        let events = self.sim.step(&self.desired, self.scenario.dt)?;
        self.steps += 1;
        self.hasher.push(self.sim.state());
        self.pending_events.extend(events.iter().cloned());
        Ok(events)
    }

    /// Snapshot for observers; drains the events gathered since the last one.
    pub fn telemetry(&mut self) -> TelemetryMessage {
        let s = self.sim.state();
        let p = self.sim.params();
        let frac = |demand: f64, capacity: f64| {
            if capacity > 0.0 {
                demand / capacity
            } else {
                0.0
            }
        };
        TelemetryMessage {
            time: s.time,
            step: self.steps,
            paused: self.paused,
            pose: TelemetryPose {
                patch: s.pose.patch.clone(),
                u: s.pose.uv.u,
                v: s.pose.uv.v,
                heading: s.pose.heading,
                roll: s.roll,
                x: s.center.x,
                y: s.center.y,
                z: s.center.z,
            },
            delta_front_deg: s.steering.delta_front.to_degrees(),
            delta_back_deg: s.steering.delta_back.to_degrees(),
            v_back: s.v_back,
            v_front: s.v_front,
            margin: s.margin.is_finite().then_some(s.margin),
            torque: magbot_core::simulator::TorqueDemand {
                motor_back: frac(s.torque.motor_back, p.motor_torque),
                motor_front: frac(s.torque.motor_front, p.motor_torque),
                servo_back: frac(s.torque.servo_back, p.servo_torque),
                servo_front: frac(s.torque.servo_front, p.servo_torque),
            },
            events: std::mem::take(&mut self.pending_events),
            markers: self.markers,
            applied_seq: self.applied_seq,
        }
    }

    /// Writes the end record and flushes the log.
    pub fn finish(&mut self) -> anyhow::Result<()> {
        let end = LogRecord::End {
            steps: self.steps,
            states: self.hasher.len(),
            trajectory_hash: self.hasher.hex(),
        };
        self.record(&end)?;
        if let Some(log) = self.log.as_mut() {
            log.flush()?;
        }
        Ok(())
    }
}

/// Outcome of replaying a session log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayReport {
    pub steps: u64,
    pub states: usize,
    pub recorded_hash: Option<String>,
    pub replayed_hash: String,
    /// `None` when the log has no end record (interrupted session).
    pub matches: Option<bool>,
}

/// Steps `world` until it has taken `step` steps.
fn advance_to(
    world: &mut World,
    step: u64,
    on_state: &mut impl FnMut(&RobotState),
) -> anyhow::Result<()> {
    if step < world.steps() {
        bail!("session log records are out of order at step {step}");
    }
    while world.steps() < step {
        if world.paused() {
            bail!(
                "session log advances while paused at step {}",
                world.steps()
            );
        }
        world.tick()?;
        on_state(world.state());
    }
    Ok(())
}

/// Re-executes a session log; `on_state` sees every state in hash order.
pub fn replay<R: BufRead>(
    reader: R,
    mut on_state: impl FnMut(&RobotState),
) -> anyhow::Result<ReplayReport> {
    let records: Vec<LogRecord> = read_jsonl(reader)
        .map_err(anyhow::Error::msg)
        .context("reading session log")?;
    let mut iter = records.into_iter();
    let Some(LogRecord::Header { version, scenario }) = iter.next() else {
        bail!("session log must start with a header record");
    };
    if version != PROTOCOL_VERSION {
        bail!("session log version {version} is not supported (expected {PROTOCOL_VERSION})");
    }
    let mut world = World::new(*scenario, None)?;
    on_state(world.state());
    let mut end = None;
    for r in iter {
        match r {
            LogRecord::Command { step, seq, command } => {
                advance_to(&mut world, step, &mut on_state)?;
                world.set_command(seq, command)?;
            }
            LogRecord::Control { step, verb } => {
                advance_to(&mut world, step, &mut on_state)?;
                world.control(verb)?;
                if verb == ControlVerb::Reset {
                    on_state(world.state());
                }
            }
            LogRecord::End {
                steps,
                trajectory_hash,
                ..
            } => {
                // A session may end paused; steps then stop at the pause point.
                if world.paused() && world.steps() < steps {
                    world.control(ControlVerb::Resume)?;
                }
                advance_to(&mut world, steps, &mut on_state)?;
                end = Some(trajectory_hash);
                break;
            }
            LogRecord::Header { .. } => bail!("unexpected second header record"),
        }
    }
    let replayed_hash = world.trajectory_hash();
    Ok(ReplayReport {
        steps: world.steps(),
        states: world.hasher.len(),
        matches: end.as_ref().map(|h| *h == replayed_hash),
        recorded_hash: end,
        replayed_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use magbot_core::scenario::load_scenario;
    use std::path::Path;
    use std::sync::{Arc, Mutex};

    /// Shared in-memory log sink.
    #[derive(Clone, Default)]
    struct Sink(Arc<Mutex<Vec<u8>>>);

    impl Write for Sink {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    fn scenario() -> Scenario {
        let path =
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/scenarios/interactive.yaml");
        load_scenario(&path).unwrap()
    }

    fn drive(v_back: f64, delta: f64) -> Command {
        Command {
            delta_front: delta,
            delta_back: 0.0,
            v_back,
            v_front: None,
        }
    }

    #[test]
    fn replay_reproduces_live_session() {
        let sink = Sink::default();
        let mut w = World::new(scenario(), Some(Box::new(sink.clone()))).unwrap();
        for _ in 0..5 {
            w.tick().unwrap();
        }
        w.set_command(1, drive(0.1, 0.0)).unwrap();
        for _ in 0..20 {
            w.tick().unwrap();
        }
        w.set_command(2, drive(0.05, 0.3)).unwrap();
        w.control(ControlVerb::Pause).unwrap();
        w.tick().unwrap();
        w.control(ControlVerb::Resume).unwrap();
        for _ in 0..10 {
            w.tick().unwrap();
        }
        w.control(ControlVerb::Reset).unwrap();
        w.set_command(3, drive(0.1, 0.0)).unwrap();
        for _ in 0..7 {
            w.tick().unwrap();
        }
        w.finish().unwrap();
        let live = w.trajectory_hash();
        let bytes = sink.0.lock().unwrap().clone();
        let mut count = 0;
        let report = replay(bytes.as_slice(), |_| count += 1).unwrap();
        assert_eq!(report.replayed_hash, live);
        assert_eq!(report.matches, Some(true));
        assert_eq!(report.steps, 42);
        assert_eq!(count, report.states);
    }

    #[test]
    fn tampered_log_mismatches() {
        let sink = Sink::default();
        let mut w = World::new(scenario(), Some(Box::new(sink.clone()))).unwrap();
        w.set_command(1, drive(0.1, 0.0)).unwrap();
        for _ in 0..10 {
            w.tick().unwrap();
        }
        w.finish().unwrap();
        let text = String::from_utf8(sink.0.lock().unwrap().clone()).unwrap();
        let tampered = text.replace("\"v_back\":0.1", "\"v_back\":0.11");
        assert_ne!(tampered, text);
        assert_eq!(
            replay(tampered.as_bytes(), |_| {}).unwrap().matches,
            Some(false)
        );
        assert!(replay("".as_bytes(), |_| {}).is_err());
    }

    #[test]
    fn paused_world_does_not_step() {
        let mut w = World::new(scenario(), None).unwrap();
        w.control(ControlVerb::Pause).unwrap();
        w.set_command(1, drive(0.1, 0.0)).unwrap();
        w.tick().unwrap();
        assert_eq!(w.steps(), 0);
        let t = w.telemetry();
        assert!(t.paused);
        assert_eq!(t.applied_seq, Some(1));
    }
}

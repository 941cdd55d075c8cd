//! Fixed-step locomotion simulator on a [`Structure`].
//!
//! The body pose is the body center. Wheel contacts sit half a wheelbase
//! ahead and behind it along geodesics of the structure, so both wheels are
//! always exactly on a patch and their geodesic separation is the wheelbase.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Point3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{
    validate_structure, GeometryError, JointKind, PatchKind, Side, Structure, StructureModel,
    SurfacePose, Uv,
};
use crate::kinematics::{
    advance, body_twist, free_joint_roll, wrap_angle, BodyTwist, KinematicsError, SteeringState,
    WheelCommand, DT_MAX, ROLL_LIMIT, V_MAX,
};
use crate::statics::{
    required_adhesion, required_moving_torque, required_steering_torque, tip_over_margin, Check,
    Contact, ContactSet, CornerLoadCase, Requirement, RobotParams, StaticsError,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("robot state is off the structure: {0}")]
    OffStructure(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Statics(#[from] StaticsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Wheel speed limit, m/s. Faster commands are scaled down as a whole.
    pub v_max: f64,
    /// Steering servo slew rate, rad/s.
    pub servo_rate: f64,
    pub roll_limit: f64,
    /// Adhesion fraction for a single-point contact (convex cylinder, or a
    /// wheel riding over an external edge).
    pub point_contact_factor: f64,
    /// Adhesion fraction per face for a wheel wedged in an internal corner.
    pub corner_hit_factor: f64,
    /// Front-speed mismatch above which a slip event is raised, m/s.
    pub slip_tolerance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            v_max: V_MAX,
            servo_rate: 3.0,
            roll_limit: ROLL_LIMIT,
            point_contact_factor: 0.5,
            corner_hit_factor: 0.3,
            slip_tolerance: 1e-9,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.v_max > 0.0, "v_max must be > 0"),
            (self.servo_rate > 0.0, "servo_rate must be > 0"),
            (
                self.roll_limit > 0.0 && self.roll_limit <= PI,
                "roll_limit must be in (0, π]",
            ),
            (
                (0.0..=1.0).contains(&self.point_contact_factor)
                    && (0.0..=1.0).contains(&self.corner_hit_factor),
                "derating factors must be in [0, 1]",
            ),
            (self.slip_tolerance >= 0.0, "slip_tolerance must be >= 0"),
        ];
        checks
            .iter()
            .find(|(ok, _)| !ok)
            .map_or(Ok(()), |(_, msg)| Err(msg.to_string()))
    }
}

/// Desired steering angles (rad) and wheel speeds (m/s).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub delta_front: f64,
    pub delta_back: f64,
    pub v_back: f64,
    /// `None` lets the kinematics choose the consistent front speed.
    #[serde(default)]
    pub v_front: Option<f64>,
}

impl Command {
    pub fn steering(&self) -> SteeringState {
        SteeringState::new(self.delta_front, self.delta_back)
    }

    pub fn wheels(&self) -> WheelCommand {
        WheelCommand {
            v_back: self.v_back,
            v_front: self.v_front,
        }
    }
}

/// One row of a command timeline; active from `t` until the next row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimedCommand {
    pub t: f64,
    pub delta_front: f64,
    pub delta_back: f64,
    pub v_back: f64,
    #[serde(default)]
    pub v_front: Option<f64>,
}

impl TimedCommand {
    pub fn command(&self) -> Command {
        Command {
            delta_front: self.delta_front,
            delta_back: self.delta_back,
            v_back: self.v_back,
            v_front: self.v_front,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandSource {
    Scripted(Vec<TimedCommand>),
    /// Commands arrive from outside (the gateway); batch runs hold still.
    #[default]
    Interactive,
}

impl CommandSource {
    /// Command active at time `t` (zero before the first row).
    pub fn at(&self, t: f64) -> Command {
        match self {
            CommandSource::Interactive => Command::default(),
            CommandSource::Scripted(rows) => {
                let idx = rows.partition_point(|r| r.t <= t + 1e-9);
                idx.checked_sub(1)
                    .map_or_else(Command::default, |i| rows[i].command())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub structure: StructureModel,
    #[serde(default)]
    pub params: RobotParams,
    #[serde(default)]
    pub config: SimConfig,
    pub initial_pose: SurfacePose,
    #[serde(default)]
    pub initial_steering: SteeringState,
    #[serde(default)]
    pub commands: CommandSource,
    pub dt: f64,
    pub duration: f64,
    #[serde(default = "default_gravity")]
    pub gravity: Vector3<f64>,
    /// Standard deviation of position noise on exported camera poses, m.
    #[serde(default)]
    pub pose_noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_gravity() -> Vector3<f64> {
    -Vector3::z()
}

impl Scenario {
    pub fn validate(&self) -> Result<Structure, SimError> {
        let mut issues = Vec::new();
        if !(self.dt > 0.0 && self.dt <= DT_MAX) {
            issues.push(format!("dt must be in (0, {DT_MAX}] (got {})", self.dt));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            issues.push(format!("duration must be > 0 (got {})", self.duration));
        }
        if let Err(e) = self.params.validate() {
            issues.push(format!("params: {e}"));
        }
        if let Err(e) = self.config.validate() {
            issues.push(format!("config: {e}"));
        }
        if self.gravity.norm() < 1e-12 {
            issues.push("gravity must be non-zero".into());
        }
        if !(self.pose_noise_sigma >= 0.0) {
            issues.push("pose_noise_sigma must be >= 0".into());
        }
        if !self.initial_steering.is_valid() {
            issues.push("initial steering outside ±90°".into());
        }
        if let CommandSource::Scripted(rows) = &self.commands {
            if rows.windows(2).any(|w| w[1].t < w[0].t) {
                issues.push("command timeline is not sorted by t".into());
            }
        }
        let structure = match Structure::new(self.structure.clone()) {
            Ok(s) => Some(s),
            Err(e) => {
                issues.push(format!("structure: {e}"));
                None
            }
        };
        match (issues.is_empty(), structure) {
            (true, Some(s)) => Ok(s),
            _ => Err(SimError::Invalid(issues)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Back,
    Front,
    Body,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actuator {
    Motor,
    Servo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryReason {
    /// A contact or the body center would leave through a side with no joint.
    FreeEdge,
    RollLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    FallRisk {
        #[serde(with = "inf_as_null")]
        margin: f64,
        threshold: f64,
    },
    TorqueSaturation {
        actuator: Actuator,
        wheel: Part,
        demand: f64,
        capacity: f64,
    },
    SteerSaturation {
        wheel: Part,
        commanded: f64,
        limit: f64,
    },
    Slip {
        residual: f64,
    },
    JointTransition {
        wheel: Part,
        joint: String,
        from: String,
        to: String,
    },
    Boundary {
        reason: BoundaryReason,
        part: Part,
        patch: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        side: Option<Side>,
    },
    Completed {
        steps: usize,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::FallRisk { .. } => "fall_risk",
            EventKind::TorqueSaturation { .. } => "torque_saturation",
            EventKind::SteerSaturation { .. } => "steer_saturation",
            EventKind::Slip { .. } => "slip",
            EventKind::JointTransition { .. } => "joint_transition",
            EventKind::Boundary { .. } => "boundary",
            EventKind::Completed { .. } => "completed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// JSON has no infinity; an unbounded margin travels as `null`.
pub mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WheelContact {
    pub patch: String,
    pub u: f64,
    pub v: f64,
    pub point: Point3<f64>,
    pub normal: Vector3<f64>,
}

/// Torque demands of the current step, N·m (zero for idle actuators).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TorqueDemand {
    pub motor_back: f64,
    pub motor_front: f64,
    pub servo_back: f64,
    pub servo_front: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub time: f64,
    pub pose: SurfacePose,
    pub steering: SteeringState,
    pub roll: f64,
    pub back: WheelContact,
    pub front: WheelContact,
    /// Body center in world coordinates.
    pub center: Point3<f64>,
    pub v_back: f64,
    pub v_front: f64,
    #[serde(with = "inf_as_null")]
    pub margin: f64,
    pub torque: TorqueDemand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactClass {
    Line,
    Point,
    CornerHit,
}

struct Placement {
    back: WheelContact,
    front: WheelContact,
    roll: f64,
}

struct Motion {
    pose: SurfacePose,
    crossings: usize,
    distance: f64,
}

enum Rejection {
    Free {
        part: Part,
        patch: String,
        side: Side,
    },
    Roll,
}

/// Single-world stepper. Owns the structure and the current state.
#[derive(Clone, Debug)]
pub struct Simulator {
    structure: Structure,
    params: RobotParams,
    config: SimConfig,
    gravity: Unit<Vector3<f64>>,
    initial: RobotState,
    state: RobotState,
    distance: f64,
    crossings: usize,
}

const MAX_CROSSINGS_PER_STEP: usize = 16;

impl Simulator {
    pub fn new(
        structure: Structure,
        params: RobotParams,
        config: SimConfig,
        gravity: Vector3<f64>,
        pose: SurfacePose,
        steering: SteeringState,
    ) -> Result<Self, SimError> {
        params.validate()?;
        config.validate().map_err(|e| SimError::Invalid(vec![e]))?;
        let gravity = Unit::try_new(gravity, 1e-12)
            .ok_or_else(|| SimError::Invalid(vec!["zero gravity".into()]))?;
        let mut sim = Self {
            structure,
            params,
            config,
            gravity,
            initial: placeholder_state(),
            state: placeholder_state(),
            distance: 0.0,
            crossings: 0,
        };
        let patch = sim
            .structure
            .patch(&pose.patch)
            .ok_or_else(|| SimError::OffStructure(format!("unknown patch '{}'", pose.patch)))?;
        if !patch.contains(pose.uv, 1e-9) {
            return Err(SimError::OffStructure(format!(
                "initial pose outside patch '{}'",
                pose.patch
            )));
        }
        let placement = match sim.place(&pose, 0.0) {
            Ok(p) => p,
            Err(Rejection::Free { part, patch, side }) => {
                return Err(SimError::OffStructure(format!(
                    "{part:?} wheel off patch '{patch}' side {side}"
                )))
            }
            Err(Rejection::Roll) => {
                return Err(SimError::OffStructure(
                    "initial free-joint roll beyond limit".into(),
                ))
            }
        };
        let mut state = sim.assemble(0.0, pose, steering, placement, 0.0, 0.0);
        state.margin = tip_over_margin(&sim.contact_set(&state))?;
        sim.initial = state.clone();
        sim.state = state;
        Ok(sim)
    }

    pub fn from_scenario(scenario: &Scenario) -> Result<Self, SimError> {
        let structure = scenario.validate()?;
        Self::new(
            structure,
            scenario.params.clone(),
            scenario.config.clone(),
            scenario.gravity,
            scenario.initial_pose.clone(),
            scenario.initial_steering,
        )
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn params(&self) -> &RobotParams {
        &self.params
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Geodesic distance travelled by the body center since the last reset.
    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// Joints crossed by the body center since the last reset.
    pub fn crossings(&self) -> usize {
        self.crossings
    }

    pub fn reset(&mut self) {
        self.state = self.initial.clone();
        self.distance = 0.0;
        self.crossings = 0;
    }

    /// Advances the world by `dt` under `cmd`.
    pub fn step(&mut self, cmd: &Command, dt: f64) -> Result<Vec<SimEvent>, SimError> {
        if !(dt > 0.0 && dt <= DT_MAX + 1e-15) {
            return Err(
                KinematicsError::Domain(format!("dt must be in (0, {DT_MAX}] (got {dt})")).into(),
            );
        }
        let prev = self.state.clone();
        self.check_on_structure(&prev)?;
        let time = prev.time + dt;
        let wheelbase = self.params.wheelbase;
        let mut events = Vec::new();
        let mut emit = |kind: EventKind| events.push(SimEvent { time, kind });

        let max_slew = self.config.servo_rate * dt;
        let mut slew = |part: Part, target: f64, current: f64| {
            let clamped = target.clamp(-FRAC_PI_2, FRAC_PI_2);
            if clamped != target {
                emit(EventKind::SteerSaturation {
                    wheel: part,
                    commanded: target,
                    limit: FRAC_PI_2,
                });
            }
            current + (clamped - current).clamp(-max_slew, max_slew)
        };
        let steering = SteeringState::new(
            slew(Part::Front, cmd.delta_front, prev.steering.delta_front),
            slew(Part::Back, cmd.delta_back, prev.steering.delta_back),
        );

        let mut wheels = cmd.wheels();
        let solution = match body_twist(&steering, &wheels, wheelbase) {
            Ok(s) => s,
            Err(KinematicsError::Slip { residual }) => {
                emit(EventKind::Slip { residual });
                wheels.v_back = 0.0;
                body_twist(&steering, &wheels, wheelbase)?
            }
            Err(e) => return Err(e.into()),
        };
        if solution.residual > self.config.slip_tolerance {
            emit(EventKind::Slip {
                residual: solution.residual,
            });
        }
        let (mut twist, mut v_back, mut v_front) =
            (solution.twist, wheels.v_back, solution.v_front);
        let peak = v_back.abs().max(v_front.abs());
        if peak > self.config.v_max {
            let s = self.config.v_max / peak;
            twist = twist.scaled(s);
            v_back *= s;
            v_front *= s;
        }

        let moved = self.integrate(&prev.pose, &twist, dt).and_then(|motion| {
            let placement = self.place(&motion.pose, prev.roll)?;
            Ok((motion, placement))
        });
        let mut state = match moved {
            Ok((motion, placement)) => {
                self.distance += motion.distance;
                self.crossings += motion.crossings;
                for (part, old, new) in [
                    (Part::Back, &prev.back, &placement.back),
                    (Part::Front, &prev.front, &placement.front),
                ] {
                    if old.patch != new.patch {
                        emit(EventKind::JointTransition {
                            wheel: part,
                            joint: self.joint_between(&old.patch, &new.patch),
                            from: old.patch.clone(),
                            to: new.patch.clone(),
                        });
                    }
                }
                self.assemble(time, motion.pose, steering, placement, v_back, v_front)
            }
            Err(rejection) => {
                emit(match rejection {
                    Rejection::Free { part, patch, side } => EventKind::Boundary {
                        reason: BoundaryReason::FreeEdge,
                        part,
                        patch,
                        side: Some(side),
                    },
                    Rejection::Roll => EventKind::Boundary {
                        reason: BoundaryReason::RollLimit,
                        part: Part::Body,
                        patch: prev.pose.patch.clone(),
                        side: None,
                    },
                });
                RobotState {
                    time,
                    steering,
                    v_back: 0.0,
                    v_front: 0.0,
                    ..prev.clone()
                }
            }
        };

        let contacts = self.contact_set(&state);
        state.margin = tip_over_margin(&contacts)?;
        if state.margin < self.params.sf_adhesion {
            emit(EventKind::FallRisk {
                margin: state.margin,
                threshold: self.params.sf_adhesion,
            });
        }

        let p = &self.params;
        let weight = p.weight();
        let mut torque = TorqueDemand::default();
        let wheel_terms = [
            (
                Part::Back,
                state.v_back,
                steering.delta_back != prev.steering.delta_back,
            ),
            (
                Part::Front,
                state.v_front,
                steering.delta_front != prev.steering.delta_front,
            ),
        ];
        for (part, speed, slewing) in wheel_terms {
            let adhesion = self.wheel_contacts(&state, part);
            let (f21, f22) = match adhesion.as_slice() {
                [only] => (0.0, only.0.adhesion),
                [leaving, ahead, ..] => (leaving.0.adhesion, ahead.0.adhesion),
                [] => (0.0, 0.0),
            };
            let (motor, servo) = match part {
                Part::Front => (&mut torque.motor_front, &mut torque.servo_front),
                _ => (&mut torque.motor_back, &mut torque.servo_back),
            };
            if speed != 0.0 {
                let case = CornerLoadCase {
                    f_2_1: f21,
                    f_2_2: f22,
                    weight,
                };
                *motor = required_moving_torque(p.wheel_radius, &case, p.friction_k, 1.0)?;
                if *motor > p.motor_torque {
                    emit(EventKind::TorqueSaturation {
                        actuator: Actuator::Motor,
                        wheel: part,
                        demand: *motor,
                        capacity: p.motor_torque,
                    });
                }
            }
            if slewing {
                let f2 = f21 + f22;
                *servo = required_steering_torque(
                    p.wheel_radius,
                    p.inter_wheel_force,
                    f2,
                    weight,
                    p.friction_k,
                    1.0,
                )?;
                if *servo > p.servo_torque {
                    emit(EventKind::TorqueSaturation {
                        actuator: Actuator::Servo,
                        wheel: part,
                        demand: *servo,
                        capacity: p.servo_torque,
                    });
                }
            }
        }
        state.torque = torque;
        self.state = state;
        Ok(events)
    }

    fn check_on_structure(&self, state: &RobotState) -> Result<(), SimError> {
        let pose = &state.pose;
        let patch = self
            .structure
            .patch(&pose.patch)
            .ok_or_else(|| SimError::OffStructure(format!("unknown patch '{}'", pose.patch)))?;
        if !patch.contains(pose.uv, 1e-9) || !pose.heading.is_finite() {
            return Err(SimError::OffStructure(format!(
                "pose outside patch '{}'",
                pose.patch
            )));
        }
        Ok(())
    }

    fn integrate(
        &self,
        start: &SurfacePose,
        twist: &BodyTwist,
        dt: f64,
    ) -> Result<Motion, Rejection> {
        let mut pose = start.clone();
        let mut remaining = dt;
        let mut distance = 0.0;
        let mut crossings = 0;
        loop {
            let patch = self
                .structure
                .patch(&pose.patch)
                .expect("pose on a known patch");
            let dev = patch.develop();
            let leg =
                |a: &SurfacePose, b: &SurfacePose| (dev.to_plane(b.uv) - dev.to_plane(a.uv)).norm();
            let end = advance(patch, &pose, twist, remaining);
            if patch.contains(end.uv, 0.0) {
                distance += leg(&pose, &end);
                return Ok(Motion {
                    pose: end,
                    crossings,
                    distance,
                });
            }
            let (mut lo, mut hi) = (0.0, remaining);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if patch.contains(advance(patch, &pose, twist, mid).uv, 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let side = patch
                .violated_side(advance(patch, &pose, twist, hi).uv)
                .expect("left the patch");
            let mut at = advance(patch, &pose, twist, lo);
            at.uv = patch.snap_to_side(side, at.uv);
            distance += leg(&pose, &at);
            let free = || Rejection::Free {
                part: Part::Body,
                patch: pose.patch.clone(),
                side,
            };
            let Some((joint, _)) = self.structure.joint_at(&pose.patch, side, at.uv) else {
                return Err(free());
            };
            if crossings == MAX_CROSSINGS_PER_STEP {
                return Err(free());
            }
            pose = self.structure.cross_joint(&at, joint).map_err(|_| free())?;
            pose.heading = wrap_angle(pose.heading);
            crossings += 1;
            remaining -= lo;
        }
    }

    fn place(&self, center: &SurfacePose, prev_roll: f64) -> Result<Placement, Rejection> {
        let half = 0.5 * self.params.wheelbase;
        let contact = |part: Part, heading: f64| {
            let start = SurfacePose {
                heading,
                ..center.clone()
            };
            let (pose, _) = self
                .structure
                .walk(&start, half)
                .map_err(|fb| Rejection::Free {
                    part,
                    patch: fb.pose.patch.clone(),
                    side: fb.side,
                })?;
            let patch = self
                .structure
                .patch(&pose.patch)
                .expect("walk ends on a known patch");
            Ok(WheelContact {
                patch: pose.patch.clone(),
                u: pose.uv.u,
                v: pose.uv.v,
                point: patch.point(pose.uv),
                normal: patch.normal(pose.uv),
            })
        };
        let front = contact(Part::Front, center.heading)?;
        let back = contact(Part::Back, center.heading + PI)?;
        let roll = free_joint_roll(&front.normal, &back.normal, &(front.point - back.point))
            .unwrap_or(prev_roll);
        if roll.abs() > self.config.roll_limit {
            return Err(Rejection::Roll);
        }
        Ok(Placement { back, front, roll })
    }

    fn assemble(
        &self,
        time: f64,
        pose: SurfacePose,
        steering: SteeringState,
        placement: Placement,
        v_back: f64,
        v_front: f64,
    ) -> RobotState {
        let patch = self
            .structure
            .patch(&pose.patch)
            .expect("pose on a known patch");
        RobotState {
            time,
            center: patch.point(pose.uv),
            pose,
            steering,
            roll: placement.roll,
            back: placement.back,
            front: placement.front,
            v_back,
            v_front,
            margin: f64::INFINITY,
            torque: TorqueDemand::default(),
        }
    }

    fn joint_between(&self, a: &str, b: &str) -> String {
        self.structure
            .joints()
            .iter()
            .find(|j| (j.a.patch == a && j.b.patch == b) || (j.a.patch == b && j.b.patch == a))
            .map(|j| j.id.clone())
            .unwrap_or_default()
    }

    /// Contact classification of a wheel from its patch and nearby joints.
    pub fn contact_class(&self, wheel: &WheelContact) -> ContactClass {
        self.classify(wheel).0
    }

    fn classify(&self, wheel: &WheelContact) -> (ContactClass, Near) {
        let r = self.params.wheel_radius;
        if let Some((dist, j, _)) = self
            .structure
            .nearest_joint(&wheel.patch, Uv::new(wheel.u, wheel.v))
        {
            let joint = &self.structure.joints()[j];
            match joint.kind {
                // A wheel touches both faces once it is within r·cot(θ/2) of the fold.
                JointKind::Internal if dist <= r / (0.5 * joint.dihedral).tan() => {
                    return (ContactClass::CornerHit, Near::Corner(j))
                }
                // Over a convex edge the wheel pivots on a single point for
                // r·tan(φ/2) on either side, φ being the turn angle.
                JointKind::External => {
                    let zone = r * (0.5 * (joint.dihedral - PI)).tan();
                    if dist <= zone {
                        return (
                            ContactClass::Point,
                            Near::Edge {
                                joint: j,
                                dist,
                                zone,
                            },
                        );
                    }
                }
                _ => {}
            }
        }
        let patch = self
            .structure
            .patch(&wheel.patch)
            .expect("contact on a known patch");
        match patch.kind {
            PatchKind::CylinderOuter => (ContactClass::Point, Near::None),
            _ => (ContactClass::Line, Near::None),
        }
    }

    fn wheel_contacts(&self, state: &RobotState, part: Part) -> Vec<(Contact, ContactClass)> {
        let wheel = match part {
            Part::Front => &state.front,
            _ => &state.back,
        };
        let f = self.params.magnet_force;
        let (class, near) = self.classify(wheel);
        let single = |adhesion: f64, normal: Vector3<f64>| {
            vec![(
                Contact {
                    point: wheel.point,
                    adhesion,
                    normal: Unit::new_normalize(normal),
                },
                class,
            )]
        };
        match near {
            Near::Corner(j) => {
                let adhesion = f * self.config.corner_hit_factor;
                let mut out = single(adhesion, wheel.normal);
                if let Some((edge_point, far_normal, inward)) = self.far_face(wheel, j) {
                    let point = edge_point + inward * self.params.wheel_radius;
                    out.push((
                        Contact {
                            point,
                            adhesion,
                            normal: Unit::new_normalize(far_normal),
                        },
                        class,
                    ));
                }
                out
            }
            Near::Edge { joint, dist, zone } => {
                // Pull direction turns from this face's normal to the bisector at the edge.
                let normal = match self.far_face(wheel, joint) {
                    Some((_, far_normal, _)) => {
                        slerp(&wheel.normal, &far_normal, 0.5 * (1.0 - dist / zone))
                    }
                    None => wheel.normal,
                };
                single(f * self.config.point_contact_factor, normal)
            }
            Near::None if class == ContactClass::Point => {
                single(f * self.config.point_contact_factor, wheel.normal)
            }
            Near::None => single(f, wheel.normal),
        }
    }

    /// Point on the fold nearest the wheel, with the far face's normal and
    /// inward direction there.
    fn far_face(
        &self,
        wheel: &WheelContact,
        j: usize,
    ) -> Option<(Point3<f64>, Vector3<f64>, Vector3<f64>)> {
        let joint = &self.structure.joints()[j];
        let (here, there) = if joint.a.patch == wheel.patch {
            (&joint.a, &joint.b)
        } else {
            (&joint.b, &joint.a)
        };
        let src = self.structure.patch(&here.patch)?;
        let dst = self.structure.patch(&there.patch)?;
        let edge_point = src.point(src.snap_to_side(here.side, Uv::new(wheel.u, wheel.v)));
        let hint = 0.5 * (dst.bounds.v[0] + dst.bounds.v[1]);
        let uv = dst.snap_to_side(there.side, dst.project(&edge_point, hint));
        let inward = dst.tangent_frame(uv).to_world(dst.inward(there.side));
        Some((edge_point, dst.normal(uv), inward))
    }

    /// Contacts, center of mass and gravity for the tip-over check.
    ///
    /// The body spans the chord between the two wheel contacts; the center of
    /// mass sits `com_height` off the chord midpoint along the mean normal.
    pub fn contact_set(&self, state: &RobotState) -> ContactSet {
        let mut contacts: Vec<Contact> = [Part::Back, Part::Front]
            .into_iter()
            .flat_map(|part| self.wheel_contacts(state, part).into_iter().map(|(c, _)| c))
            .collect();
        // Both wheels wedged in the same fold can report the same far-face point.
        contacts.dedup_by(|a, b| (a.point - b.point).norm() < 1e-9);
        let mid = nalgebra::center(&state.back.point, &state.front.point);
        let normal = (state.back.normal + state.front.normal)
            .try_normalize(1e-9)
            .unwrap_or_else(|| {
                let patch = self
                    .structure
                    .patch(&state.pose.patch)
                    .expect("pose on a known patch");
                patch.normal(state.pose.uv)
            });
        ContactSet {
            contacts,
            center_of_mass: mid + normal * self.params.com_height,
            weight: self.params.weight(),
            gravity: Some(self.gravity),
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Near {
    None,
    Corner(usize),
    Edge { joint: usize, dist: f64, zone: f64 },
}

/// Unit vector a fraction `t` of the way from `a` to `b` along the great circle.
fn slerp(a: &Vector3<f64>, b: &Vector3<f64>, t: f64) -> Vector3<f64> {
    let angle = a.angle(b);
    if angle < 1e-12 {
        return *a;
    }
    (a * ((1.0 - t) * angle).sin() + b * (t * angle).sin()) / angle.sin()
}

fn placeholder_state() -> RobotState {
    let wheel = WheelContact {
        patch: String::new(),
        u: 0.0,
        v: 0.0,
        point: Point3::origin(),
        normal: Vector3::z(),
    };
    RobotState {
        time: 0.0,
        pose: SurfacePose::new("", 0.0, 0.0, 0.0),
        steering: SteeringState::default(),
        roll: 0.0,
        back: wheel.clone(),
        front: wheel,
        center: Point3::origin(),
        v_back: 0.0,
        v_front: 0.0,
        margin: f64::INFINITY,
        torque: TorqueDemand::default(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: usize,
    pub duration: f64,
    /// Geodesic path length of the body center, m.
    pub distance: f64,
    /// Joints crossed by the body center.
    pub joints_crossed: usize,
    #[serde(with = "inf_as_null")]
    pub min_margin: f64,
    pub max_motor_torque: f64,
    pub max_servo_torque: f64,
    pub event_counts: BTreeMap<String, usize>,
    pub final_pose: SurfacePose,
    pub trajectory_hash: String,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trajectory: Vec<RobotState>,
    pub events: Vec<SimEvent>,
    pub summary: Summary,
}

/// Incremental SHA-256 over the bit patterns of each state's time, pose,
/// roll and steering, in push order.
#[derive(Clone, Default)]
pub struct TrajectoryHasher {
    hasher: Sha256,
    count: usize,
}

impl TrajectoryHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, s: &RobotState) {
        self.hasher.update(s.pose.patch.as_bytes());
        self.hasher.update([0u8]);
        let values = [
            s.time,
            s.pose.uv.u,
            s.pose.uv.v,
            s.pose.heading,
            s.roll,
            s.steering.delta_front,
            s.steering.delta_back,
        ];
        for v in values {
            self.hasher.update(v.to_bits().to_le_bytes());
        }
        self.count += 1;
    }

    /// States pushed so far.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Lowercase hex digest of the states pushed so far.
    pub fn hex(&self) -> String {
        self.hasher
            .clone()
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn trajectory_hash(states: &[RobotState]) -> String {
    let mut h = TrajectoryHasher::new();
    states.iter().for_each(|s| h.push(s));
    h.hex()
}

/// Number of fixed steps covering `duration`.
pub fn step_count(duration: f64, dt: f64) -> usize {
    ((duration / dt) - 1e-9).ceil().max(0.0) as usize
}

/// Runs a scripted scenario to completion.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, SimError> {
    let mut sim = Simulator::from_scenario(scenario)?;
    let steps = step_count(scenario.duration, scenario.dt);
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut events = Vec::new();
    trajectory.push(sim.state().clone());
    for _ in 0..steps {
        let cmd = scenario.commands.at(sim.state().time);
        events.extend(sim.step(&cmd, scenario.dt)?);
        trajectory.push(sim.state().clone());
    }
    let end = sim.state().time;
    events.push(SimEvent {
        time: end,
        kind: EventKind::Completed { steps },
    });
    let summary = summarize(&sim, &trajectory, &events, steps);
    Ok(RunOutput {
        trajectory,
        events,
        summary,
    })
}

pub fn summarize(
    sim: &Simulator,
    trajectory: &[RobotState],
    events: &[SimEvent],
    steps: usize,
) -> Summary {
    let mut event_counts = BTreeMap::new();
    for e in events {
        *event_counts.entry(e.kind.name().to_string()).or_insert(0) += 1;
    }
    let fold = |f: fn(&RobotState) -> f64| trajectory.iter().map(f).fold(0.0, f64::max);
    Summary {
        steps,
        duration: sim.state().time,
        distance: sim.distance(),
        joints_crossed: sim.crossings(),
        min_margin: trajectory
            .iter()
            .map(|s| s.margin)
            .fold(f64::INFINITY, f64::min),
        max_motor_torque: fold(|s| s.torque.motor_back.max(s.torque.motor_front)),
        max_servo_torque: fold(|s| s.torque.servo_back.max(s.torque.servo_front)),
        event_counts,
        final_pose: sim.state().pose.clone(),
        trajectory_hash: trajectory_hash(trajectory),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchCheck {
    pub patch: String,
    pub issues: Vec<String>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointCheck {
    pub joint: String,
    pub kind: JointKind,
    pub checks: Vec<Check>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraversabilityReport {
    pub patches: Vec<PatchCheck>,
    pub joints: Vec<JointCheck>,
    /// Structure-level issues not tied to one patch.
    pub issues: Vec<String>,
    pub pass: bool,
}

impl std::fmt::Display for TraversabilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        for p in &self.patches {
            writeln!(f, "patch {:<12} {}", p.patch, verdict(p.pass))?;
            for issue in &p.issues {
                writeln!(f, "    {issue}")?;
            }
        }
        for j in &self.joints {
            writeln!(f, "joint {:<12} {:?} {}", j.joint, j.kind, verdict(j.pass))?;
            for c in &j.checks {
                writeln!(
                    f,
                    "    {:<16} required {:>9.4} available {:>9.4} {}",
                    c.requirement.to_string(),
                    c.required,
                    c.available,
                    verdict(c.pass)
                )?;
            }
        }
        for issue in &self.issues {
            writeln!(f, "structure: {issue}")?;
        }
        write!(f, "overall: {}", verdict(self.pass))
    }
}

/// Static traversability of every patch and joint for a given robot.
///
/// Patches are checked against the minimum cylinder diameter and maneuver
/// width. At each joint the front wheel's derated adhesion is compared with
/// the required adhesion, and the corner torque formulas are evaluated with
/// the derated adhesion as the corner load. Internal corners sum the two
/// corner-hit contacts; external corners use a single point contact.
pub fn traversability_report(
    model: &StructureModel,
    params: &RobotParams,
    config: &SimConfig,
) -> Result<TraversabilityReport, SimError> {
    let found = validate_structure(model)?;
    let structure = Structure::new(model.clone())?;
    let mut patches: Vec<PatchCheck> = model
        .patches
        .iter()
        .map(|p| PatchCheck {
            patch: p.id.clone(),
            issues: Vec::new(),
            pass: true,
        })
        .collect();
    let mut issues = Vec::new();
    for issue in &found {
        let text = issue.to_string();
        match patches
            .iter_mut()
            .find(|p| issue.patch() == Some(p.patch.as_str()))
        {
            Some(p) => {
                p.issues.push(text);
                p.pass = false;
            }
            None => issues.push(text),
        }
    }
    let p = params;
    let weight = p.weight();
    let joints = structure
        .joints()
        .iter()
        .map(|joint| {
            let (per_face, faces) = match joint.kind {
                JointKind::Internal => (p.magnet_force * config.corner_hit_factor, 2.0),
                JointKind::External => (p.magnet_force * config.point_contact_factor, 1.0),
                JointKind::Tangent => (p.magnet_force, 1.0),
            };
            let case = match joint.kind {
                JointKind::Internal => CornerLoadCase {
                    f_2_1: per_face,
                    f_2_2: per_face,
                    weight,
                },
                _ => CornerLoadCase {
                    f_2_1: 0.0,
                    f_2_2: per_face,
                    weight,
                },
            };
            let label = joint.id.clone();
            let mut checks = Vec::new();
            let adhesion = required_adhesion(weight, p.com_height, p.wheelbase, 1.0)?;
            checks.push(Check::new(
                Requirement::Adhesion,
                label.clone(),
                adhesion,
                p.sf_adhesion,
                per_face * faces,
            ));
            let moving = required_moving_torque(p.wheel_radius, &case, p.friction_k, 1.0)?;
            checks.push(Check::new(
                Requirement::MovingTorque,
                label.clone(),
                moving,
                p.sf_torque,
                p.motor_torque,
            ));
            let steering = required_steering_torque(
                p.wheel_radius,
                p.inter_wheel_force,
                per_face,
                weight,
                p.friction_k,
                1.0,
            )?;
            checks.push(Check::new(
                Requirement::SteeringTorque,
                label,
                steering,
                p.sf_torque,
                p.servo_torque,
            ));
            let pass = checks.iter().all(|c| c.pass);
            Ok(JointCheck {
                joint: joint.id.clone(),
                kind: joint.kind,
                checks,
                pass,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let pass = issues.is_empty() && patches.iter().all(|p| p.pass) && joints.iter().all(|j| j.pass);
    Ok(TraversabilityReport {
        patches,
        joints,
        issues,
        pass,
    })
}

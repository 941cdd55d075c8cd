//! Dual-steering bicycle kinematics in the developed plane.
//!
//! Body frame: back contact at the origin, front contact at `(L, 0)`, `x`
//! along the body axis, `y` to the left. Steering angles are measured from
//! `x`, positive counterclockwise seen from the surface normal. Twists are
//! expressed at the body center `(L/2, 0)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, SurfacePatch, SurfacePose};

/// Default wheel speed limit, m/s.
pub const V_MAX: f64 = 0.2;
/// Default free-joint roll limit, rad.
pub const ROLL_LIMIT: f64 = FRAC_PI_2;
/// Largest integration step accepted by [`integrate_pose`], s.
pub const DT_MAX: f64 = 0.05;

// cos δ below this is treated as a wheel turned fully sideways.
const SIDEWAYS_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("{0}")]
    Domain(String),
    /// The commanded wheel speeds violate a rolling constraint.
    #[error("inconsistent wheel command (slip residual {residual:.3e} m/s)")]
    Slip { residual: f64 },
    /// A helix at 90° to the circumference is an axial line with no pitch.
    #[error("helix angle of π/2 is an axial line, not a spiral")]
    AxialLine,
    #[error(transparent)]
    Boundary(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SteeringState {
    pub delta_front: f64,
    pub delta_back: f64,
}

impl SteeringState {
    pub fn new(delta_front: f64, delta_back: f64) -> Self {
        Self {
            delta_front,
            delta_back,
        }
    }

    pub fn is_valid(&self) -> bool {
        let ok = |d: f64| d.abs() <= FRAC_PI_2 + 1e-12;
        ok(self.delta_front) && ok(self.delta_back)
    }
}

/// Signed wheel rolling speeds. `v_front = None` lets the kinematics pick
/// the front speed consistent with `v_back`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WheelCommand {
    pub v_back: f64,
    #[serde(default)]
    pub v_front: Option<f64>,
}

impl WheelCommand {
    pub fn back(v_back: f64) -> Self {
        Self {
            v_back,
            v_front: None,
        }
    }

    pub fn both(v_back: f64, v_front: f64) -> Self {
        Self {
            v_back,
            v_front: Some(v_front),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BodyTwist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl BodyTwist {
    pub fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    /// Velocity of the body-frame point at `x` along the axis (center = 0).
    pub fn velocity_at(&self, x: f64) -> Vector2<f64> {
        Vector2::new(self.vx, self.vy + self.omega * x)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            vx: self.vx * s,
            vy: self.vy * s,
            omega: self.omega * s,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FreeJointState {
    pub roll: f64,
}

/// Locomotion modes: Mode 1 steers one wheel while the other stays aligned
/// with the body; Mode 2 steers both.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    #[serde(alias = "1", alias = "mode1")]
    One,
    #[serde(alias = "2", alias = "mode2")]
    Two,
}

impl Mode {
    pub fn admits(self, steer: &SteeringState) -> bool {
        match self {
            Mode::One => steer.delta_front == 0.0 || steer.delta_back == 0.0,
            Mode::Two => true,
        }
    }
}

/// Instantaneous center of rotation in the body frame (back contact at origin).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Icr {
    Point(Vector2<f64>),
    /// Axle lines parallel and distinct: the body translates along `heading`
    /// (the common rolling direction, relative to the body axis).
    Translation {
        heading: f64,
    },
    /// Axle lines coincide with the body axis: the wheel speeds decide
    /// between sideways translation and rotation about a point on the axis.
    OnBodyAxis,
}

fn axle_direction(delta: f64) -> Vector2<f64> {
    Vector2::new(-delta.sin(), delta.cos())
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

pub fn icr(steer: &SteeringState, wheelbase: f64) -> Result<Icr, KinematicsError> {
    if !(wheelbase > 0.0) {
        return Err(KinematicsError::Domain(format!(
            "wheelbase must be > 0 (got {wheelbase})"
        )));
    }
    let nb = axle_direction(steer.delta_back);
    let nf = axle_direction(steer.delta_front);
    let front = Vector2::new(wheelbase, 0.0);
    let denom = cross2(&nb, &nf);
    if denom.abs() < 1e-12 {
        // Parallel: coincident iff the back axle line passes through the front contact.
        return Ok(if cross2(&nb, &front).abs() < 1e-12 * wheelbase {
            Icr::OnBodyAxis
        } else {
            Icr::Translation {
                heading: steer.delta_back,
            }
        });
    }
    let s = cross2(&front, &nf) / denom;
    Ok(Icr::Point(nb * s))
}

/// Body twist consistent with the back-wheel speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwistSolution {
    pub twist: BodyTwist,
    /// Front rolling speed that satisfies both rolling constraints.
    pub v_front: f64,
    /// `|commanded v_front − v_front|`, zero when `v_front` was not commanded.
    pub residual: f64,
}

/// Solves the two no-side-slip constraints for the body twist.
///
/// The back speed is authoritative. When the front wheel is turned fully
/// sideways and the back wheel is not, the back wheel is the pivot: it must
/// be stopped, and the commanded front speed drives the turn. When both
/// wheels are sideways the commanded front speed is used as given (equal
/// lateral speeds translate, opposite speeds rotate about the center).
pub fn body_twist(
    steer: &SteeringState,
    cmd: &WheelCommand,
    wheelbase: f64,
) -> Result<TwistSolution, KinematicsError> {
    if !(wheelbase > 0.0) {
        return Err(KinematicsError::Domain(format!(
            "wheelbase must be > 0 (got {wheelbase})"
        )));
    }
    let (sb, cb) = steer.delta_back.sin_cos();
    let (sf, cf) = steer.delta_front.sin_cos();
    let vb = cmd.v_back;
    let l = wheelbase;

    let (vf, residual) = if cf.abs() >= SIDEWAYS_EPS {
        let vf = vb * cb / cf;
        (vf, cmd.v_front.map_or(0.0, |c| (c - vf).abs()))
    } else if cb.abs() >= SIDEWAYS_EPS {
        if vb != 0.0 {
            return Err(KinematicsError::Slip {
                residual: (vb * cb).abs(),
            });
        }
        (cmd.v_front.unwrap_or(0.0), 0.0)
    } else {
        let auto = if sf.abs() > 0.0 { vb * sb / sf } else { 0.0 };
        (cmd.v_front.unwrap_or(auto), 0.0)
    };
    let omega = (vf * sf - vb * sb) / l;
    let twist = BodyTwist {
        vx: vb * cb,
        vy: vb * sb + 0.5 * l * omega,
        omega,
    };
    Ok(TwistSolution {
        twist,
        v_front: vf,
        residual,
    })
}

/// Displacement `(dx, dy)` in the body frame and rotation after applying
/// `twist` for `dt`, using the exact rigid-motion exponential.
pub fn exp_twist(twist: &BodyTwist, dt: f64) -> (Vector2<f64>, f64) {
    let th = twist.omega * dt;
    let (vx, vy) = (twist.vx * dt, twist.vy * dt);
    if th.abs() < 1e-9 {
        // Series to second order keeps the straight-line limit exact.
        let d = Vector2::new(vx - 0.5 * th * vy, vy + 0.5 * th * vx);
        return (d, th);
    }
    let (s, c) = th.sin_cos();
    let a = s / th;
    let b = (1.0 - c) / th;
    (Vector2::new(a * vx - b * vy, b * vx + a * vy), th)
}

pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Pose moved in `patch`'s developed plane by `twist` for `dt`.
///
/// Leaving the patch bounds is an error; callers that handle joint
/// crossings use [`exp_twist`] directly.
pub fn integrate_pose(
    patch: &SurfacePatch,
    pose: &SurfacePose,
    twist: &BodyTwist,
    dt: f64,
) -> Result<SurfacePose, KinematicsError> {
    if !(dt > 0.0 && dt <= DT_MAX + 1e-15) {
        return Err(KinematicsError::Domain(format!(
            "dt must be in (0, {DT_MAX}] (got {dt})"
        )));
    }
    let next = advance(patch, pose, twist, dt);
    if !patch.contains(next.uv, 1e-12) {
        return Err(GeometryError::OutOfBounds {
            patch: patch.id.clone(),
            u: next.uv.u,
            v: next.uv.v,
        }
        .into());
    }
    Ok(next)
}

/// Same as [`integrate_pose`] with no bounds or step-size checks.
pub fn advance(
    patch: &SurfacePatch,
    pose: &SurfacePose,
    twist: &BodyTwist,
    dt: f64,
) -> SurfacePose {
    let dev = patch.develop();
    let (d, th) = exp_twist(twist, dt);
    let (s, c) = pose.heading.sin_cos();
    let world = Vector2::new(c * d.x - s * d.y, s * d.x + c * d.y);
    SurfacePose {
        patch: pose.patch.clone(),
        uv: dev.to_surface(dev.to_plane(pose.uv) + world),
        heading: wrap_angle(pose.heading + th),
    }
}

/// Axial advance per revolution of a helix on a cylinder of `radius`, with
/// `helix_angle` measured from the circumferential direction.
pub fn spiral_pitch(radius: f64, helix_angle: f64) -> Result<f64, KinematicsError> {
    if !(radius > 0.0) {
        return Err(KinematicsError::Domain(format!(
            "radius must be > 0 (got {radius})"
        )));
    }
    if (helix_angle - FRAC_PI_2).abs() < 1e-12 {
        return Err(KinematicsError::AxialLine);
    }
    if !(0.0..FRAC_PI_2).contains(&helix_angle) {
        return Err(KinematicsError::Domain(format!(
            "helix angle must be in [0, π/2) (got {helix_angle})"
        )));
    }
    Ok(TAU * radius * helix_angle.tan())
}

/// Rotation about `body_axis` taking the back normal's projection onto the
/// front normal's projection, in (−π, π].
pub fn free_joint_roll(
    normal_front: &Vector3<f64>,
    normal_back: &Vector3<f64>,
    body_axis: &Vector3<f64>,
) -> Result<f64, KinematicsError> {
    let axis = body_axis
        .try_normalize(1e-12)
        .ok_or_else(|| KinematicsError::Domain("zero body axis".into()))?;
    let project = |n: &Vector3<f64>| n - axis * n.dot(&axis);
    let (pf, pb) = (project(normal_front), project(normal_back));
    if pf.norm() < 1e-9 || pb.norm() < 1e-9 {
        return Err(KinematicsError::Domain(
            "contact normal parallel to body axis".into(),
        ));
    }
    Ok(axis.dot(&pb.cross(&pf)).atan2(pb.dot(&pf)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, PatchKind};
    use approx::assert_relative_eq;

    const L: f64 = 0.11;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    // Independent two-line intersection by Cramer's rule.
    fn line_intersection(p: [f64; 2], d: [f64; 2], q: [f64; 2], e: [f64; 2]) -> Option<[f64; 2]> {
        let det = d[0] * (-e[1]) - (-e[0]) * d[1];
        if det.abs() < 1e-14 {
            return None;
        }
        let rx = q[0] - p[0];
        let ry = q[1] - p[1];
        let s = (rx * (-e[1]) - (-e[0]) * ry) / det;
        Some([p[0] + s * d[0], p[1] + s * d[1]])
    }

    #[test]
    fn icr_cases() {
        assert_eq!(
            icr(&SteeringState::new(0.0, 0.0), L).unwrap(),
            Icr::Translation { heading: 0.0 }
        );
        assert_eq!(
            icr(&SteeringState::new(FRAC_PI_2, FRAC_PI_2), L).unwrap(),
            Icr::OnBodyAxis
        );
        match icr(&SteeringState::new(FRAC_PI_2, 0.0), L).unwrap() {
            Icr::Point(p) => assert!(p.norm() < 1e-12),
            other => panic!("{other:?}"),
        }
        let d = deg(30.0);
        let Icr::Point(p) = icr(&SteeringState::new(d, 0.0), L).unwrap() else {
            panic!()
        };
        let oracle =
            line_intersection([0.0, 0.0], [0.0, 1.0], [L, 0.0], [-d.sin(), d.cos()]).unwrap();
        assert_relative_eq!(p.x, oracle[0], epsilon = 1e-12);
        assert_relative_eq!(p.y, oracle[1], epsilon = 1e-12);
        assert_relative_eq!(p.y, L / d.tan(), epsilon = 1e-12);
        assert!(icr(&SteeringState::default(), 0.0).is_err());
    }

    #[test]
    fn twist_examples() {
        let s = body_twist(&SteeringState::default(), &WheelCommand::back(0.1), L).unwrap();
        assert_eq!(s.twist, BodyTwist::new(0.1, 0.0, 0.0));
        assert_eq!(s.v_front, 0.1);

        let side = SteeringState::new(FRAC_PI_2, FRAC_PI_2);
        let s = body_twist(&side, &WheelCommand::back(0.1), L).unwrap();
        assert_relative_eq!(s.twist.vx, 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.twist.vy, 0.1, epsilon = 1e-15);
        assert_relative_eq!(s.twist.omega, 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.v_front, 0.1, epsilon = 1e-15);

        // Two points moving ±0.1 perpendicular to the segment joining them.
        let s = body_twist(&side, &WheelCommand::both(-0.1, 0.1), L).unwrap();
        assert_relative_eq!(s.twist.vx, 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.twist.vy, 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.twist.omega, 2.0 * 0.1 / L, epsilon = 1e-12);
    }

    #[test]
    fn pivot_requires_stopped_back_wheel() {
        let steer = SteeringState::new(FRAC_PI_2, 0.0);
        let err = body_twist(&steer, &WheelCommand::both(0.05, 0.1), L).unwrap_err();
        assert!(
            matches!(err, KinematicsError::Slip { residual } if (residual - 0.05).abs() < 1e-12)
        );
        let ok = body_twist(&steer, &WheelCommand::both(0.0, 0.1), L).unwrap();
        assert_relative_eq!(ok.twist.omega, 0.1 / L, epsilon = 1e-12);
        // Back wheel is the ICR, so the center moves at omega·L/2 sideways.
        assert_relative_eq!(ok.twist.vy, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn inconsistent_front_speed_reports_residual() {
        let s = body_twist(&SteeringState::default(), &WheelCommand::both(0.1, 0.07), L).unwrap();
        assert_eq!(s.v_front, 0.1);
        assert_relative_eq!(s.residual, 0.03, epsilon = 1e-15);
    }

    #[test]
    fn integrate_examples() {
        let plane = SurfacePatch::plane("p", Frame::identity(), [-5.0, 5.0], [-5.0, 5.0]);
        let pose = SurfacePose::new("p", 0.0, 0.0, 0.0);
        let same = integrate_pose(&plane, &pose, &BodyTwist::default(), 0.05).unwrap();
        assert_eq!(same, pose);
        let mut p = pose.clone();
        for _ in 0..20 {
            p = integrate_pose(&plane, &p, &BodyTwist::new(0.1, 0.0, 0.0), 0.05).unwrap();
        }
        assert_relative_eq!(p.uv.u, 0.1, epsilon = 1e-15);
        assert_eq!(p.heading, 0.0);
        assert!(integrate_pose(&plane, &pose, &BodyTwist::default(), 0.06).is_err());
        let edge = SurfacePose::new("p", 4.999, 0.0, 0.0);
        assert!(matches!(
            integrate_pose(&plane, &edge, &BodyTwist::new(0.1, 0.0, 0.0), 0.05),
            Err(KinematicsError::Boundary(_))
        ));
    }

    #[test]
    fn arc_matches_closed_form() {
        let plane = SurfacePatch::plane("p", Frame::identity(), [-5.0, 5.0], [-5.0, 5.0]);
        let (v, w) = (0.1, 0.7);
        let mut p = SurfacePose::new("p", 0.0, 0.0, 0.0);
        for _ in 0..1000 {
            p = integrate_pose(&plane, &p, &BodyTwist::new(v, 0.0, w), 0.001).unwrap();
        }
        // Circle of radius v/w centered at (0, v/w).
        let r = v / w;
        assert_relative_eq!(p.uv.u, r * w.sin(), epsilon = 1e-6);
        assert_relative_eq!(p.uv.v, r * (1.0 - w.cos()), epsilon = 1e-6);
        assert_relative_eq!(p.heading, w, epsilon = 1e-9);
    }

    #[test]
    fn cylinder_motion_is_developed() {
        let c = SurfacePatch::cylinder(
            "c",
            PatchKind::CylinderOuter,
            Frame::identity(),
            0.1,
            [-1.0, 1.0],
            [0.0, TAU],
        );
        let pose = SurfacePose::new("c", 0.0, 0.5, FRAC_PI_2);
        let next = integrate_pose(&c, &pose, &BodyTwist::new(0.05, 0.0, 0.0), 0.05).unwrap();
        // Developed y = -R·v on an outer cylinder.
        assert_relative_eq!(next.uv.v, 0.5 - 0.0025 / 0.1, epsilon = 1e-12);
        assert_relative_eq!(next.uv.u, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn spiral_pitch_examples() {
        assert_eq!(spiral_pitch(0.1, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            spiral_pitch(0.1, deg(45.0)).unwrap(),
            0.6283185307179586,
            max_relative = 1e-12
        );
        assert_eq!(
            spiral_pitch(0.1, FRAC_PI_2),
            Err(KinematicsError::AxialLine)
        );
        assert!(matches!(
            spiral_pitch(0.0, 0.1),
            Err(KinematicsError::Domain(_))
        ));
    }

    #[test]
    fn roll_examples() {
        let z = Vector3::z();
        assert_eq!(free_joint_roll(&z, &z, &Vector3::x()).unwrap(), 0.0);
        let r = free_joint_roll(&Vector3::y(), &z, &Vector3::x()).unwrap();
        assert_relative_eq!(r.abs(), FRAC_PI_2, epsilon = 1e-15);
        assert!(free_joint_roll(&Vector3::x(), &z, &Vector3::x()).is_err());
    }

    #[test]
    fn mode_one_needs_an_aligned_wheel() {
        assert!(Mode::One.admits(&SteeringState::new(0.3, 0.0)));
        assert!(!Mode::One.admits(&SteeringState::new(0.3, 0.2)));
        assert!(Mode::Two.admits(&SteeringState::new(0.3, 0.2)));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-15);
    }
}

//! Developable surface patches, the structure graph that joins them, and the
//! isometries used to move the robot across them.
//!
//! Every patch carries a *developed* chart: a planar coordinate system
//! `(x, y)` in meters that is an exact isometry of the surface. The chart is
//! oriented so that `x × y` maps to the surface normal on the robot's side,
//! which makes "counterclockwise" mean the same thing on every patch.
//!
//! | kind             | parameters                           | developed chart |
//! |------------------|--------------------------------------|-----------------|
//! | `plane`          | `u` along frame x, `v` along frame y | `(u, v)`        |
//! | `cylinder_outer` | `u` along frame z (axis), `v` angle  | `(u, -R v)`     |
//! | `cylinder_inner` | `u` along frame z (axis), `v` angle  | `(u, R v)`      |
//!
//! Cylinder angles are measured from the frame x axis toward the frame y axis.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::{Point3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest allowed outer diameter of a climbable cylinder, in meters.
pub const MIN_CYLINDER_DIAMETER: f64 = 0.150;
/// Narrowest strip the robot can maneuver on, in meters.
pub const MIN_MANEUVER_WIDTH: f64 = 0.100;

const FRAME_TOL: f64 = 1e-9;
const SEGMENT_TOL: f64 = 1e-6;
const ON_BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("parameters ({u}, {v}) outside bounds of patch '{patch}'")]
    OutOfBounds { patch: String, u: f64, v: f64 },
    #[error("pose is not on boundary segment of joint '{joint}'")]
    NotOnBoundary { joint: String },
    #[error("invalid patch '{patch}': {reason}")]
    InvalidPatch { patch: String, reason: String },
    #[error("structural error: {0}")]
    Structural(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchKind {
    Plane,
    #[serde(alias = "cylinder-outer")]
    CylinderOuter,
    #[serde(alias = "cylinder-inner")]
    CylinderInner,
}

impl PatchKind {
    pub fn is_cylinder(self) -> bool {
        !matches!(self, PatchKind::Plane)
    }
}

/// Right-handed orthonormal frame. The third axis is `x_axis × y_axis`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: Point3<f64>,
    pub x_axis: Vector3<f64>,
    pub y_axis: Vector3<f64>,
}

impl Frame {
    pub fn new(origin: Point3<f64>, x_axis: Vector3<f64>, y_axis: Vector3<f64>) -> Self {
        Self {
            origin,
            x_axis,
            y_axis,
        }
    }

    pub fn identity() -> Self {
        Self::new(Point3::origin(), Vector3::x(), Vector3::y())
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.x_axis.cross(&self.y_axis)
    }

    fn check(&self) -> Result<(), String> {
        let x = self.x_axis;
        let y = self.y_axis;
        if (x.norm() - 1.0).abs() > FRAME_TOL || (y.norm() - 1.0).abs() > FRAME_TOL {
            return Err("frame axes are not unit length".into());
        }
        if x.dot(&y).abs() > FRAME_TOL {
            return Err("frame axes are not orthogonal".into());
        }
        Ok(())
    }
}

/// Surface parameters. `u` is always meters; `v` is meters on planes and
/// radians on cylinders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uv {
    pub u: f64,
    pub v: f64,
}

impl Uv {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub u: [f64; 2],
    pub v: [f64; 2],
}

impl Bounds {
    pub fn new(u: [f64; 2], v: [f64; 2]) -> Self {
        Self { u, v }
    }
}

/// One side of a patch's parameter rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    UMin,
    UMax,
    VMin,
    VMax,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Side::UMin => "u_min",
            Side::UMax => "u_max",
            Side::VMin => "v_min",
            Side::VMax => "v_max",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePatch {
    pub id: String,
    pub kind: PatchKind,
    pub frame: Frame,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub bounds: Bounds,
}

/// Isometry between a patch's parameters and its developed plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Development {
    /// d(y)/d(v): 1 for planes, ±R for cylinders.
    y_scale: f64,
}

impl Development {
    pub fn to_plane(&self, uv: Uv) -> Vector2<f64> {
        Vector2::new(uv.u, self.y_scale * uv.v)
    }

    pub fn to_surface(&self, xy: Vector2<f64>) -> Uv {
        Uv::new(xy.x, xy.y / self.y_scale)
    }

    /// Developed-plane length of one unit of `v`.
    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }
}

/// Tangent frame at a surface point: images of the developed x and y axes,
/// plus the normal on the robot's side.
#[derive(Clone, Copy, Debug)]
pub struct TangentFrame {
    pub dx: Vector3<f64>,
    pub dy: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl TangentFrame {
    /// 3D unit tangent for a developed-plane heading.
    pub fn direction(&self, heading: f64) -> Vector3<f64> {
        self.dx * heading.cos() + self.dy * heading.sin()
    }

    /// Developed-plane heading of a tangent vector.
    pub fn heading_of(&self, t: &Vector3<f64>) -> f64 {
        t.dot(&self.dy).atan2(t.dot(&self.dx))
    }

    pub fn to_world(&self, d: Vector2<f64>) -> Vector3<f64> {
        self.dx * d.x + self.dy * d.y
    }
}

impl SurfacePatch {
    pub fn plane(id: &str, frame: Frame, u: [f64; 2], v: [f64; 2]) -> Self {
        Self {
            id: id.into(),
            kind: PatchKind::Plane,
            frame,
            radius: None,
            bounds: Bounds::new(u, v),
        }
    }

    pub fn cylinder(
        id: &str,
        kind: PatchKind,
        frame: Frame,
        radius: f64,
        u: [f64; 2],
        v: [f64; 2],
    ) -> Self {
        Self {
            id: id.into(),
            kind,
            frame,
            radius: Some(radius),
            bounds: Bounds::new(u, v),
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> GeometryError {
        GeometryError::InvalidPatch {
            patch: self.id.clone(),
            reason: reason.into(),
        }
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        self.frame.check().map_err(|r| self.invalid(r))?;
        match (self.kind, self.radius) {
            (PatchKind::Plane, Some(_)) => return Err(self.invalid("planes have no radius")),
            (PatchKind::Plane, None) => {}
            (_, None) => return Err(self.invalid("cylinder without radius")),
            (_, Some(r)) if !(r > 0.0 && r.is_finite()) => {
                return Err(self.invalid("radius must be > 0"))
            }
            _ => {}
        }
        let [u0, u1] = self.bounds.u;
        let [v0, v1] = self.bounds.v;
        if !(u1 > u0) || !(v1 > v0) || ![u0, u1, v0, v1].iter().all(|x| x.is_finite()) {
            return Err(self.invalid("bounds must have positive area"));
        }
        if self.kind.is_cylinder() && v1 - v0 > TAU + 1e-9 {
            return Err(self.invalid("cylinder angle span exceeds 2π"));
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        self.radius.unwrap_or(0.0)
    }

    /// Full-revolution cylinders wrap in `v` and have no `v` sides.
    pub fn is_periodic(&self) -> bool {
        self.kind.is_cylinder() && self.bounds.v[1] - self.bounds.v[0] >= TAU - 1e-9
    }

    pub fn contains(&self, uv: Uv, tol: f64) -> bool {
        let [u0, u1] = self.bounds.u;
        let [v0, v1] = self.bounds.v;
        let v_tol = tol / self.develop().y_scale().abs();
        uv.u >= u0 - tol
            && uv.u <= u1 + tol
            && (self.is_periodic() || (uv.v >= v0 - v_tol && uv.v <= v1 + v_tol))
    }

    pub fn develop(&self) -> Development {
        let y_scale = match self.kind {
            PatchKind::Plane => 1.0,
            PatchKind::CylinderOuter => -self.radius(),
            PatchKind::CylinderInner => self.radius(),
        };
        Development { y_scale }
    }

    /// Developed-plane rectangle `([x_min, x_max], [y_min, y_max])`.
    pub fn developed_bounds(&self) -> ([f64; 2], [f64; 2]) {
        let s = self.develop().y_scale();
        let (a, b) = (s * self.bounds.v[0], s * self.bounds.v[1]);
        (self.bounds.u, [a.min(b), a.max(b)])
    }

    fn radial(&self, v: f64) -> Vector3<f64> {
        self.frame.x_axis * v.cos() + self.frame.y_axis * v.sin()
    }

    /// Surface point with no bounds check.
    pub fn point(&self, uv: Uv) -> Point3<f64> {
        let f = &self.frame;
        match self.kind {
            PatchKind::Plane => f.origin + f.x_axis * uv.u + f.y_axis * uv.v,
            _ => f.origin + f.z_axis() * uv.u + self.radial(uv.v) * self.radius(),
        }
    }

    pub fn normal(&self, uv: Uv) -> Vector3<f64> {
        match self.kind {
            PatchKind::Plane => self.frame.z_axis(),
            PatchKind::CylinderOuter => self.radial(uv.v),
            PatchKind::CylinderInner => -self.radial(uv.v),
        }
    }

    pub fn tangent_frame(&self, uv: Uv) -> TangentFrame {
        let f = &self.frame;
        match self.kind {
            PatchKind::Plane => TangentFrame {
                dx: f.x_axis,
                dy: f.y_axis,
                normal: f.z_axis(),
            },
            _ => {
                // d(point)/dv normalized, then scaled by the chart orientation.
                let along_v = -f.x_axis * uv.v.sin() + f.y_axis * uv.v.cos();
                let sign = self.develop().y_scale().signum();
                TangentFrame {
                    dx: f.z_axis(),
                    dy: along_v * sign,
                    normal: self.normal(uv),
                }
            }
        }
    }

    pub fn point_and_normal(
        &self,
        uv: Uv,
    ) -> Result<(Point3<f64>, Unit<Vector3<f64>>), GeometryError> {
        if !self.contains(uv, 1e-12) {
            return Err(GeometryError::OutOfBounds {
                patch: self.id.clone(),
                u: uv.u,
                v: uv.v,
            });
        }
        Ok((self.point(uv), Unit::new_normalize(self.normal(uv))))
    }

    /// Parameters of the surface point closest to `p`. For cylinders the
    /// angle is unwrapped to lie nearest `v_hint`.
    pub fn project(&self, p: &Point3<f64>, v_hint: f64) -> Uv {
        let f = &self.frame;
        let d = p - f.origin;
        match self.kind {
            PatchKind::Plane => Uv::new(d.dot(&f.x_axis), d.dot(&f.y_axis)),
            _ => {
                let a = d.dot(&f.y_axis).atan2(d.dot(&f.x_axis));
                Uv::new(d.dot(&f.z_axis()), unwrap_near(a, v_hint))
            }
        }
    }

    fn side_value(&self, side: Side) -> f64 {
        match side {
            Side::UMin => self.bounds.u[0],
            Side::UMax => self.bounds.u[1],
            Side::VMin => self.bounds.v[0],
            Side::VMax => self.bounds.v[1],
        }
    }

    /// `uv` moved onto `side` along the other parameter.
    pub fn snap_to_side(&self, side: Side, uv: Uv) -> Uv {
        snap_to_side(self, side, uv)
    }

    /// Side whose bound `uv` violates the most, in developed meters.
    pub fn violated_side(&self, uv: Uv) -> Option<Side> {
        let ys = self.develop().y_scale().abs();
        let [u0, u1] = self.bounds.u;
        let [v0, v1] = self.bounds.v;
        let mut sides = vec![(Side::UMin, u0 - uv.u), (Side::UMax, uv.u - u1)];
        if !self.is_periodic() {
            sides.push((Side::VMin, (v0 - uv.v) * ys));
            sides.push((Side::VMax, (uv.v - v1) * ys));
        }
        sides
            .into_iter()
            .filter(|&(_, d)| d > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(s, _)| s)
    }

    /// Full parameter range of the free parameter along a side.
    pub fn side_range(&self, side: Side) -> [f64; 2] {
        match side {
            Side::UMin | Side::UMax => self.bounds.v,
            Side::VMin | Side::VMax => self.bounds.u,
        }
    }

    /// Point on a side at free parameter `s` (`v` for u-sides, `u` for v-sides).
    pub fn side_uv(&self, side: Side, s: f64) -> Uv {
        match side {
            Side::UMin | Side::UMax => Uv::new(self.side_value(side), s),
            Side::VMin | Side::VMax => Uv::new(s, self.side_value(side)),
        }
    }

    /// Free parameter of `uv` along `side`, and its distance (developed
    /// meters) from the side line.
    pub fn side_coordinate(&self, side: Side, uv: Uv) -> (f64, f64) {
        let ys = self.develop().y_scale().abs();
        match side {
            Side::UMin | Side::UMax => (uv.v, (uv.u - self.side_value(side)).abs()),
            Side::VMin | Side::VMax => (uv.u, (uv.v - self.side_value(side)).abs() * ys),
        }
    }

    /// Developed length of a parameter interval along a side.
    pub fn segment_length(&self, side: Side, range: [f64; 2]) -> f64 {
        let span = (range[1] - range[0]).abs();
        match side {
            Side::UMin | Side::UMax => span * self.develop().y_scale().abs(),
            Side::VMin | Side::VMax => span,
        }
    }

    /// Unit tangent pointing from `side` into the patch, in developed coordinates.
    pub fn inward(&self, side: Side) -> Vector2<f64> {
        let sy = self.develop().y_scale().signum();
        match side {
            Side::UMin => Vector2::new(1.0, 0.0),
            Side::UMax => Vector2::new(-1.0, 0.0),
            Side::VMin => Vector2::new(0.0, sy),
            Side::VMax => Vector2::new(0.0, -sy),
        }
    }

    /// Nearest positive ray hit within bounds: `(t, uv)` with `origin + t·dir`
    /// on the surface.
    pub fn ray_intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, Uv)> {
        const T_MIN: f64 = 1e-9;
        let f = &self.frame;
        match self.kind {
            PatchKind::Plane => {
                let n = f.z_axis();
                let denom = dir.dot(&n);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (f.origin - origin).dot(&n) / denom;
                if t <= T_MIN {
                    return None;
                }
                let uv = self.project(&(origin + dir * t), 0.0);
                self.contains(uv, 0.0).then_some((t, uv))
            }
            _ => {
                // Solve |(o + t d) - axis component|² = R² in the frame's xy plane.
                let r = self.radius();
                let o = origin - f.origin;
                let (ox, oy) = (o.dot(&f.x_axis), o.dot(&f.y_axis));
                let (dx, dy) = (dir.dot(&f.x_axis), dir.dot(&f.y_axis));
                let a = dx * dx + dy * dy;
                if a < 1e-18 {
                    return None;
                }
                let b = 2.0 * (ox * dx + oy * dy);
                let c = ox * ox + oy * oy - r * r;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let mut roots = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)];
                roots.sort_by(|x, y| x.total_cmp(y));
                let mid = 0.5 * (self.bounds.v[0] + self.bounds.v[1]);
                roots.into_iter().filter(|t| *t > T_MIN).find_map(|t| {
                    let p = origin + dir * t;
                    let mut uv = self.project(&p, mid);
                    if self.is_periodic() {
                        let v0 = self.bounds.v[0];
                        uv.v = v0 + (uv.v - v0).rem_euclid(TAU);
                    }
                    // Only the side facing the robot is a visible surface.
                    let facing = dir.dot(&self.normal(uv)) < 0.0;
                    (facing && self.contains(uv, 0.0)).then_some((t, uv))
                })
            }
        }
    }
}

/// Unwraps angle `a` onto the branch nearest `hint`.
fn unwrap_near(a: f64, hint: f64) -> f64 {
    a + TAU * ((hint - a) / TAU).round()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    /// Concave fold, free-space angle below π.
    Internal,
    /// Convex fold, free-space angle above π.
    External,
    /// Tangent-continuous seam (free-space angle exactly π).
    Tangent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySegment {
    pub patch: String,
    pub side: Side,
    /// Sub-range of the side's free parameter; the whole side when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

/// Sharp edge joining two patch boundaries. `dihedral` is the free-space
/// angle between the two surfaces on the robot's side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointEdge {
    #[serde(default)]
    pub id: String,
    pub a: BoundarySegment,
    pub b: BoundarySegment,
    pub dihedral: f64,
    pub kind: JointKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureModel {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default = "default_world_frame")]
    pub world_frame: String,
    pub patches: Vec<SurfacePatch>,
    #[serde(default)]
    pub joints: Vec<JointEdge>,
}

fn default_version() -> u32 {
    1
}

fn default_world_frame() -> String {
    "world".into()
}

impl StructureModel {
    pub fn new(patches: Vec<SurfacePatch>, joints: Vec<JointEdge>) -> Self {
        Self {
            version: 1,
            world_frame: default_world_frame(),
            patches,
            joints,
        }
    }
}

/// Surface-anchored pose. `heading` is measured in the developed plane from
/// +u, counterclockwise seen from the robot's side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePose {
    pub patch: String,
    pub uv: Uv,
    pub heading: f64,
}

impl SurfacePose {
    pub fn new(patch: &str, u: f64, v: f64, heading: f64) -> Self {
        Self {
            patch: patch.into(),
            uv: Uv::new(u, v),
            heading,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Issue {
    BelowMinDiameter {
        patch: String,
        diameter: f64,
    },
    BelowManeuverWidth {
        patch: String,
        width: f64,
    },
    DanglingJoint {
        joint: String,
        gap: f64,
    },
    DihedralMismatch {
        joint: String,
        declared: f64,
        measured: f64,
    },
}

impl Issue {
    /// Patch the issue is about, if any.
    pub fn patch(&self) -> Option<&str> {
        match self {
            Issue::BelowMinDiameter { patch, .. } | Issue::BelowManeuverWidth { patch, .. } => {
                Some(patch)
            }
            _ => None,
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::BelowMinDiameter { patch, diameter } => write!(
                f,
                "patch '{patch}': diameter {:.0} mm below {:.0}mm minimum diameter",
                diameter * 1e3,
                MIN_CYLINDER_DIAMETER * 1e3
            ),
            Issue::BelowManeuverWidth { patch, width } => write!(
                f,
                "patch '{patch}': width {:.0} mm below {:.0}mm maneuver width",
                width * 1e3,
                MIN_MANEUVER_WIDTH * 1e3
            ),
            Issue::DanglingJoint { joint, gap } => {
                write!(f, "joint '{joint}': boundary segments do not meet (gap {gap:.3e} m)")
            }
            Issue::DihedralMismatch { joint, declared, measured } => write!(
                f,
                "joint '{joint}': declared dihedral {declared:.6} rad, geometry gives {measured:.6} rad"
            ),
        }
    }
}

/// Checks the model against the robot's climbing envelope. Malformed models
/// (duplicate or unresolved ids, invalid patches, disconnected graphs) are
/// reported as `Err`; envelope violations come back as issues.
pub fn validate_structure(model: &StructureModel) -> Result<Vec<Issue>, GeometryError> {
    let structure = Structure::new(model.clone())?;
    let mut issues = Vec::new();
    for p in &structure.model.patches {
        if p.kind == PatchKind::CylinderOuter {
            let d = 2.0 * p.radius();
            if d < MIN_CYLINDER_DIAMETER {
                issues.push(Issue::BelowMinDiameter {
                    patch: p.id.clone(),
                    diameter: d,
                });
            }
        }
        let ([x0, x1], [y0, y1]) = p.developed_bounds();
        let width = if p.is_periodic() {
            x1 - x0
        } else {
            (x1 - x0).min(y1 - y0)
        };
        if width < MIN_MANEUVER_WIDTH {
            issues.push(Issue::BelowManeuverWidth {
                patch: p.id.clone(),
                width,
            });
        }
    }
    for (j, joint) in structure.model.joints.iter().enumerate() {
        let gap = structure.segment_gap(j);
        if gap > SEGMENT_TOL {
            issues.push(Issue::DanglingJoint {
                joint: joint.id.clone(),
                gap,
            });
            continue;
        }
        let measured = structure.measured_dihedral(j);
        if (measured - joint.dihedral).abs() > SEGMENT_TOL {
            issues.push(Issue::DihedralMismatch {
                joint: joint.id.clone(),
                declared: joint.dihedral,
                measured,
            });
        }
    }
    Ok(issues)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointEnd {
    A,
    B,
}

/// Where a straight developed-plane walk left a patch without a joint.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeBoundary {
    pub pose: SurfacePose,
    pub side: Side,
    /// Distance walked before hitting the boundary.
    pub travelled: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Crossing {
    pub joint: usize,
    pub from: String,
    pub to: String,
}

/// Validated structure with resolved ids and per-side joint lookup.
#[derive(Clone, Debug)]
pub struct Structure {
    model: StructureModel,
    index: HashMap<String, usize>,
    // (patch index, side) -> joints touching that side
    side_joints: HashMap<(usize, Side), Vec<(usize, JointEnd)>>,
}

impl Structure {
    pub fn new(model: StructureModel) -> Result<Self, GeometryError> {
        if model.patches.is_empty() {
            return Err(GeometryError::Structural("structure has no patches".into()));
        }
        let mut model = model;
        let mut index = HashMap::new();
        for (i, p) in model.patches.iter().enumerate() {
            p.check()?;
            if index.insert(p.id.clone(), i).is_some() {
                return Err(GeometryError::Structural(format!(
                    "duplicate patch id '{}'",
                    p.id
                )));
            }
        }
        for (j, joint) in model.joints.iter_mut().enumerate() {
            if joint.id.is_empty() {
                joint.id = format!("j{j}");
            }
        }
        let mut side_joints: HashMap<(usize, Side), Vec<(usize, JointEnd)>> = HashMap::new();
        for (j, joint) in model.joints.iter().enumerate() {
            for (seg, end) in [(&joint.a, JointEnd::A), (&joint.b, JointEnd::B)] {
                let Some(&pi) = index.get(&seg.patch) else {
                    return Err(GeometryError::Structural(format!(
                        "joint '{}' references missing patch '{}'",
                        joint.id, seg.patch
                    )));
                };
                let patch = &model.patches[pi];
                if patch.is_periodic() && matches!(seg.side, Side::VMin | Side::VMax) {
                    return Err(GeometryError::Structural(format!(
                        "joint '{}' uses a v side of full cylinder '{}'",
                        joint.id, patch.id
                    )));
                }
                side_joints
                    .entry((pi, seg.side))
                    .or_default()
                    .push((j, end));
            }
            if joint.a.patch == joint.b.patch && joint.a.side == joint.b.side {
                return Err(GeometryError::Structural(format!(
                    "joint '{}' joins a side to itself",
                    joint.id
                )));
            }
            if !(joint.dihedral > 0.0 && joint.dihedral < TAU) {
                return Err(GeometryError::Structural(format!(
                    "joint '{}' dihedral {} outside (0, 2π)",
                    joint.id, joint.dihedral
                )));
            }
            let kind_ok = match joint.kind {
                JointKind::Internal => joint.dihedral < PI,
                JointKind::External => joint.dihedral > PI,
                JointKind::Tangent => (joint.dihedral - PI).abs() <= SEGMENT_TOL,
            };
            if !kind_ok {
                return Err(GeometryError::Structural(format!(
                    "joint '{}' kind {:?} inconsistent with dihedral {}",
                    joint.id, joint.kind, joint.dihedral
                )));
            }
        }
        let structure = Self {
            model,
            index,
            side_joints,
        };
        for (j, joint) in structure.model.joints.iter().enumerate() {
            let la = structure.segment_len(&joint.a);
            let lb = structure.segment_len(&joint.b);
            if (la - lb).abs() > SEGMENT_TOL {
                return Err(GeometryError::Structural(format!(
                    "joint '{}' segment lengths differ ({la} vs {lb})",
                    joint.id
                )));
            }
            if structure.segment_gap(j) <= SEGMENT_TOL && !structure.orientation_consistent(j) {
                return Err(GeometryError::Structural(format!(
                    "joint '{}' joins patches whose normals face opposite sides",
                    joint.id
                )));
            }
        }
        structure.check_connected()?;
        Ok(structure)
    }

    pub fn model(&self) -> &StructureModel {
        &self.model
    }

    pub fn patches(&self) -> &[SurfacePatch] {
        &self.model.patches
    }

    pub fn joints(&self) -> &[JointEdge] {
        &self.model.joints
    }

    pub fn patch(&self, id: &str) -> Option<&SurfacePatch> {
        self.index.get(id).map(|&i| &self.model.patches[i])
    }

    fn patch_or_err(&self, id: &str) -> Result<&SurfacePatch, GeometryError> {
        self.patch(id)
            .ok_or_else(|| GeometryError::Structural(format!("unknown patch '{id}'")))
    }

    pub fn joint_index(&self, id: &str) -> Option<usize> {
        self.model.joints.iter().position(|j| j.id == id)
    }

    fn check_connected(&self) -> Result<(), GeometryError> {
        let n = self.model.patches.len();
        if n <= 1 {
            return Ok(());
        }
        let mut adj = vec![Vec::new(); n];
        for j in &self.model.joints {
            let (a, b) = (self.index[&j.a.patch], self.index[&j.b.patch]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &k in &adj[i] {
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back(k);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(GeometryError::Structural(format!(
                "patch '{}' is not connected to the rest of the structure",
                self.model.patches[i].id
            ))),
            None => Ok(()),
        }
    }

    fn segment_range(&self, seg: &BoundarySegment) -> [f64; 2] {
        let patch = &self.model.patches[self.index[&seg.patch]];
        seg.range.unwrap_or_else(|| patch.side_range(seg.side))
    }

    fn segment_len(&self, seg: &BoundarySegment) -> f64 {
        let patch = &self.model.patches[self.index[&seg.patch]];
        patch.segment_length(seg.side, self.segment_range(seg))
    }

    fn segment_point(&self, seg: &BoundarySegment, frac: f64) -> (Point3<f64>, Uv) {
        let patch = &self.model.patches[self.index[&seg.patch]];
        let [s0, s1] = self.segment_range(seg);
        let uv = patch.side_uv(seg.side, s0 + frac * (s1 - s0));
        (patch.point(uv), uv)
    }

    /// Largest distance from a sample on segment A to segment B.
    fn segment_gap(&self, j: usize) -> f64 {
        let joint = &self.model.joints[j];
        let b_patch = &self.model.patches[self.index[&joint.b.patch]];
        let [s0, s1] = self.segment_range(&joint.b);
        let (lo, hi) = (s0.min(s1), s0.max(s1));
        (0..=8)
            .map(|k| {
                let (p, _) = self.segment_point(&joint.a, k as f64 / 8.0);
                let mid = 0.5 * (b_patch.bounds.v[0] + b_patch.bounds.v[1]);
                let uv = b_patch.project(&p, mid);
                let (s, _) = b_patch.side_coordinate(joint.b.side, uv);
                let on_side = b_patch.side_uv(joint.b.side, s.clamp(lo, hi));
                (b_patch.point(on_side) - p).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Edge tangent, and inward directions of both patches at the midpoint.
    fn edge_frame(
        &self,
        j: usize,
    ) -> (
        Vector3<f64>,
        TangentFrame,
        Vector3<f64>,
        TangentFrame,
        Vector3<f64>,
    ) {
        let joint = &self.model.joints[j];
        let a = &self.model.patches[self.index[&joint.a.patch]];
        let b = &self.model.patches[self.index[&joint.b.patch]];
        let (p, uv_a) = self.segment_point(&joint.a, 0.5);
        let uv_b = snap_to_side(b, joint.b.side, b.project(&p, uv_hint(b)));
        let fa = a.tangent_frame(uv_a);
        let fb = b.tangent_frame(uv_b);
        let a_in = fa.to_world(a.inward(joint.a.side));
        let b_in = fb.to_world(b.inward(joint.b.side));
        let edge = fa.normal.cross(&a_in);
        (edge, fa, a_in, fb, b_in)
    }

    /// Free-space angle between the two surfaces, measured from geometry.
    pub fn measured_dihedral(&self, j: usize) -> f64 {
        let (_, fa, a_in, _, b_in) = self.edge_frame(j);
        let theta = a_in.dot(&b_in).clamp(-1.0, 1.0).acos();
        let side = fa.normal.dot(&b_in);
        if side > 1e-12 {
            theta
        } else if side < -1e-12 {
            TAU - theta
        } else {
            PI
        }
    }

    fn orientation_consistent(&self, j: usize) -> bool {
        let (_, fa, a_in, fb, b_in) = self.edge_frame(j);
        let sa = fa.normal.dot(&b_in);
        let sb = fb.normal.dot(&a_in);
        if sa.abs() < 1e-9 && sb.abs() < 1e-9 {
            fa.normal.dot(&fb.normal) > 0.0
        } else {
            sa * sb > 0.0
        }
    }

    /// Joint attached to `patch` along `side` whose segment contains `uv`.
    pub fn joint_at(&self, patch: &str, side: Side, uv: Uv) -> Option<(usize, JointEnd)> {
        let pi = *self.index.get(patch)?;
        let p = &self.model.patches[pi];
        let (s, _) = p.side_coordinate(side, uv);
        let tol = ON_BOUNDARY_TOL / p.develop().y_scale().abs().min(1.0);
        self.side_joints
            .get(&(pi, side))?
            .iter()
            .copied()
            .find(|&(j, end)| {
                let seg = self.segment(j, end);
                let [s0, s1] = self.segment_range(seg);
                s >= s0.min(s1) - tol && s <= s0.max(s1) + tol
            })
    }

    fn segment(&self, j: usize, end: JointEnd) -> &BoundarySegment {
        let joint = &self.model.joints[j];
        match end {
            JointEnd::A => &joint.a,
            JointEnd::B => &joint.b,
        }
    }

    /// Moves a pose lying on a joint's boundary segment onto the adjacent
    /// patch. The 3D point is unchanged; the heading keeps its component
    /// along the edge and its component across the edge.
    pub fn cross_joint(
        &self,
        pose: &SurfacePose,
        joint: usize,
    ) -> Result<SurfacePose, GeometryError> {
        let edge = &self.model.joints[joint];
        let not_on = || GeometryError::NotOnBoundary {
            joint: edge.id.clone(),
        };
        let (from, to) = if pose.patch == edge.a.patch && self.on_segment(pose, &edge.a) {
            (&edge.a, &edge.b)
        } else if pose.patch == edge.b.patch && self.on_segment(pose, &edge.b) {
            (&edge.b, &edge.a)
        } else {
            return Err(not_on());
        };
        let src = self.patch_or_err(&from.patch)?;
        let dst = self.patch_or_err(&to.patch)?;

        let p = src.point(pose.uv);
        let fa = src.tangent_frame(pose.uv);
        let a_in = fa.to_world(src.inward(from.side));
        let along = fa.normal.cross(&a_in);
        let t = fa.direction(pose.heading);
        let alpha = t.dot(&along);
        let beta = -t.dot(&a_in);

        let uv_b = snap_to_side(dst, to.side, dst.project(&p, uv_hint(dst)));
        let fb = dst.tangent_frame(uv_b);
        let b_in = fb.to_world(dst.inward(to.side));
        let t_new = along * alpha + b_in * beta;
        Ok(SurfacePose {
            patch: dst.id.clone(),
            uv: uv_b,
            heading: fb.heading_of(&t_new),
        })
    }

    fn on_segment(&self, pose: &SurfacePose, seg: &BoundarySegment) -> bool {
        let Some(patch) = self.patch(&seg.patch) else {
            return false;
        };
        let (s, dist) = patch.side_coordinate(seg.side, pose.uv);
        let [s0, s1] = self.segment_range(seg);
        let tol = ON_BOUNDARY_TOL / patch.develop().y_scale().abs().min(1.0);
        dist <= ON_BOUNDARY_TOL.max(1e-9) && s >= s0.min(s1) - tol && s <= s0.max(s1) + tol
    }

    /// Walks `distance` meters from `pose` along the developed straight line
    /// at `pose.heading`, crossing joints as needed. The returned pose keeps
    /// the (possibly re-expressed) walking direction as its heading.
    pub fn walk(
        &self,
        pose: &SurfacePose,
        distance: f64,
    ) -> Result<(SurfacePose, Vec<Crossing>), FreeBoundary> {
        let mut pose = pose.clone();
        let mut remaining = distance;
        let mut crossings = Vec::new();
        for _ in 0..64 {
            let patch = self.patch(&pose.patch).expect("pose on known patch");
            let dev = patch.develop();
            let start = dev.to_plane(pose.uv);
            let dir = Vector2::new(pose.heading.cos(), pose.heading.sin());
            let exit = exit_along_line(patch, start, dir);
            match exit {
                Some((t, side)) if t < remaining => {
                    let mut at = dev.to_surface(start + dir * t);
                    at = snap_to_side(patch, side, at);
                    let at_pose = SurfacePose {
                        patch: pose.patch.clone(),
                        uv: at,
                        heading: pose.heading,
                    };
                    let Some((j, _)) = self.joint_at(&pose.patch, side, at) else {
                        return Err(FreeBoundary {
                            pose: at_pose,
                            side,
                            travelled: distance - remaining + t,
                        });
                    };
                    let next = self
                        .cross_joint(&at_pose, j)
                        .expect("walk stays on joint segment");
                    crossings.push(Crossing {
                        joint: j,
                        from: pose.patch.clone(),
                        to: next.patch.clone(),
                    });
                    remaining -= t;
                    pose = next;
                }
                _ => {
                    pose.uv = dev.to_surface(start + dir * remaining);
                    return Ok((pose, crossings));
                }
            }
        }
        panic!("walk crossed more than 64 joints in one call");
    }

    /// Nearest ray hit over all patches.
    pub fn ray_cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize, Uv)> {
        self.model
            .patches
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.ray_intersect(origin, dir).map(|(t, uv)| (t, i, uv)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Geodesic distance (developed meters) from `uv` to the nearest joint
    /// segment on the same patch, with that joint's index and its far patch.
    pub fn nearest_joint(&self, patch: &str, uv: Uv) -> Option<(f64, usize, JointEnd)> {
        let pi = *self.index.get(patch)?;
        let p = &self.model.patches[pi];
        [Side::UMin, Side::UMax, Side::VMin, Side::VMax]
            .into_iter()
            .filter_map(|side| {
                let list = self.side_joints.get(&(pi, side))?;
                let (s, dist) = p.side_coordinate(side, uv);
                list.iter()
                    .filter(|&&(j, end)| {
                        let [s0, s1] = self.segment_range(self.segment(j, end));
                        s >= s0.min(s1) - 1e-12 && s <= s0.max(s1) + 1e-12
                    })
                    .map(|&(j, end)| (dist, j, end))
                    .next()
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// The other side of `joint` seen from `end`.
    pub fn opposite(&self, joint: usize, end: JointEnd) -> &BoundarySegment {
        match end {
            JointEnd::A => &self.model.joints[joint].b,
            JointEnd::B => &self.model.joints[joint].a,
        }
    }
}

fn uv_hint(p: &SurfacePatch) -> f64 {
    0.5 * (p.bounds.v[0] + p.bounds.v[1])
}

fn snap_to_side(p: &SurfacePatch, side: Side, uv: Uv) -> Uv {
    match side {
        Side::UMin | Side::UMax => Uv::new(p.side_value(side), uv.v),
        Side::VMin | Side::VMax => Uv::new(uv.u, p.side_value(side)),
    }
}

/// First exit of the ray `start + t·dir` (t ≥ 0) from the developed rectangle.
fn exit_along_line(
    patch: &SurfacePatch,
    start: Vector2<f64>,
    dir: Vector2<f64>,
) -> Option<(f64, Side)> {
    let ([x0, x1], [y0, y1]) = patch.developed_bounds();
    let sy = patch.develop().y_scale().signum();
    let mut best: Option<(f64, Side)> = None;
    let mut consider = |t: f64, side: Side| {
        let t = t.max(0.0);
        if best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, side));
        }
    };
    if dir.x > 1e-15 {
        consider((x1 - start.x) / dir.x, Side::UMax);
    } else if dir.x < -1e-15 {
        consider((x0 - start.x) / dir.x, Side::UMin);
    }
    if !patch.is_periodic() {
        // Developed y increases with v when sy > 0.
        let (hi_side, lo_side) = if sy > 0.0 {
            (Side::VMax, Side::VMin)
        } else {
            (Side::VMin, Side::VMax)
        };
        if dir.y > 1e-15 {
            consider((y1 - start.y) / dir.y, hi_side);
        } else if dir.y < -1e-15 {
            consider((y0 - start.y) / dir.y, lo_side);
        }
    }
    best
}

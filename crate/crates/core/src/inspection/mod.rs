//! Inspection mapping: timestamped camera poses plus rust detections become
//! world-frame rust markers.
//!
//! Frames: pixel `(u, v)` with `u` along image columns and pixel centers at
//! integer coordinates; camera frame `x` right, `y` down, `z` forward; pose
//! samples place the camera in the tracker frame; the alignment maps tracker
//! coordinates into the world.

mod detect;
pub mod io;
pub mod synth;

use std::collections::VecDeque;

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Exec;

pub use detect::{detect_rust_stub, StubConfig};

#[derive(Debug, Error)]
pub enum InspectionError {
    #[error("invalid depth {0} m (must be > 0)")]
    InvalidDepth(f64),
    #[error("pixel ({u}, {v}) outside the {width}x{height} image")]
    OutOfImage {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    #[error("no pose within {max_skew} s of detection at t={t}")]
    Unsynchronized { t: f64, max_skew: f64 },
    #[error("detection rejected: {0}")]
    Rejected(String),
    #[error("pose stream is empty")]
    EmptyPoses,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] crate::scenario::IoError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    /// 640x480 depth stream of a typical stereo depth camera.
    fn default() -> Self {
        Self {
            fx: 385.0,
            fy: 385.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), InspectionError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(InspectionError::Invalid(format!(
                "invalid intrinsics {self:?}"
            )))
        }
    }

    /// Pixel centers span `[0, width-1] x [0, height-1]`; the outer pixel
    /// edges extend half a pixel beyond.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        (-0.5..=self.width as f64 - 0.5).contains(&u)
            && (-0.5..=self.height as f64 - 0.5).contains(&v)
    }

    /// Camera-frame direction through pixel `(u, v)` with unit `z`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Pinhole inverse projection of pixel `(u, v)` at depth `z` (along the optical axis).
pub fn deproject(
    u: f64,
    v: f64,
    z: f64,
    k: &CameraIntrinsics,
) -> Result<Point3<f64>, InspectionError> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(InspectionError::InvalidDepth(z));
    }
    if !k.contains(u, v) {
        return Err(InspectionError::OutOfImage {
            u,
            v,
            width: k.width,
            height: k.height,
        });
    }
    Ok(Point3::from(k.ray(u, v) * z))
}

/// Pinhole projection; points at or behind the camera have no image.
pub fn project(p: &Point3<f64>, k: &CameraIntrinsics) -> Result<(f64, f64), InspectionError> {
    if !(p.z > 0.0) {
        return Err(InspectionError::InvalidDepth(p.z));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Camera pose in the tracker frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSample {
    pub t: f64,
    pub position: Point3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl PoseSample {
    pub fn new(t: f64, iso: &Isometry3<f64>) -> Self {
        Self {
            t,
            position: Point3::from(iso.translation.vector),
            orientation: iso.rotation,
        }
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position.coords), self.orientation)
    }
}

/// Flat row form `t,x,y,z,qx,qy,qz,qw` used by pose logs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub qw: f64,
}

/// Quaternions read from logs may carry print rounding; anything further
/// from unit length than this is rejected rather than renormalised.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

impl TryFrom<PoseRow> for PoseSample {
    type Error = InspectionError;

    fn try_from(r: PoseRow) -> Result<Self, Self::Error> {
        let q = Quaternion::new(r.qw, r.qx, r.qy, r.qz);
        if (q.norm() - 1.0).abs() > QUATERNION_TOLERANCE
            || ![r.t, r.x, r.y, r.z].iter().all(|x| x.is_finite())
        {
            return Err(InspectionError::Invalid(format!(
                "pose at t={} is not a unit quaternion pose",
                r.t
            )));
        }
        Ok(Self {
            t: r.t,
            position: Point3::new(r.x, r.y, r.z),
            orientation: UnitQuaternion::new_normalize(q),
        })
    }
}

impl From<&PoseSample> for PoseRow {
    fn from(p: &PoseSample) -> Self {
        let q = p.orientation.quaternion();
        Self {
            t: p.t,
            x: p.position.x,
            y: p.position.y,
            z: p.position.z,
            qx: q.i,
            qy: q.j,
            qz: q.k,
            qw: q.w,
        }
    }
}

/// Rigid transform in a serialisable form; `rotation` is `[qx, qy, qz, qw]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidTransform {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl From<&Isometry3<f64>> for RigidTransform {
    fn from(iso: &Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        let q = iso.rotation.quaternion();
        Self {
            translation: [t.x, t.y, t.z],
            rotation: [q.i, q.j, q.k, q.w],
        }
    }
}

impl TryFrom<RigidTransform> for Isometry3<f64> {
    type Error = InspectionError;

    fn try_from(r: RigidTransform) -> Result<Self, Self::Error> {
        let [x, y, z, w] = r.rotation;
        let q = Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(InspectionError::Invalid(
                "alignment rotation is not a unit quaternion".into(),
            ));
        }
        let [tx, ty, tz] = r.translation;
        Ok(Isometry3::from_parts(
            Translation3::new(tx, ty, tz),
            UnitQuaternion::new_normalize(q),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    /// Capture time of the color frame, s.
    pub t: f64,
    /// `[u_min, v_min, u_max, v_max]` in pixels.
    pub bbox: [f64; 4],
    pub confidence: f64,
    #[serde(default = "default_label")]
    pub label: String,
}

fn default_label() -> String {
    "rust".into()
}

impl DetectionRecord {
    pub fn validate(&self, k: &CameraIntrinsics) -> Result<(), InspectionError> {
        let [u0, v0, u1, v1] = self.bbox;
        if !(u0 < u1 && v0 < v1) {
            return Err(InspectionError::Invalid(format!(
                "detection at t={}: empty box {:?}",
                self.t, self.bbox
            )));
        }
        if !k.contains(u0, v0) || !k.contains(u1, v1) {
            return Err(InspectionError::Invalid(format!(
                "detection at t={}: box outside image",
                self.t
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(InspectionError::Invalid(format!(
                "detection at t={}: confidence not in [0, 1]",
                self.t
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        let [u0, v0, u1, v1] = self.bbox;
        (0.5 * (u0 + u1), 0.5 * (v0 + v1))
    }

    /// Box center followed by the four points halfway between it and each corner.
    pub fn depth_samples(&self) -> [(f64, f64); 5] {
        let [u0, v0, u1, v1] = self.bbox;
        let (cu, cv) = self.center();
        let (qu, qv) = (0.25 * (u1 - u0), 0.25 * (v1 - v0));
        [
            (cu, cv),
            (cu - qu, cv - qv),
            (cu + qu, cv - qv),
            (cu - qu, cv + qv),
            (cu + qu, cv + qv),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RustMarker {
    pub center: Point3<f64>,
    pub radius: f64,
    /// Number of detections merged into this marker.
    pub support: usize,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectionMap {
    pub markers: Vec<RustMarker>,
    /// Camera positions in the world frame, in pose order.
    pub path: Vec<Point3<f64>>,
    /// World from tracker.
    pub alignment: RigidTransform,
    /// Detections with no pose inside the skew window.
    pub dropped: usize,
    /// Detections whose depth samples failed the validity checks.
    pub rejected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspectionConfig {
    /// Largest pose/detection time difference accepted, s.
    pub max_skew: f64,
    pub merge_radius: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    /// World from tracker; defaults to the inverse of the first pose.
    pub alignment: Option<RigidTransform>,
}

impl Default for InspectionConfig {
    fn default() -> Self {
        Self {
            max_skew: 0.05,
            merge_radius: 0.05,
            min_depth: 0.1,
            max_depth: 5.0,
            alignment: None,
        }
    }
}

/// Marker radius floor, m.
pub const MIN_MARKER_RADIUS: f64 = 0.01;

/// Depth, in meters, at pixel `(u, v)` of the frame captured at `t`.
pub trait DepthSource: Sync {
    fn depth(&self, t: f64, u: f64, v: f64) -> Option<f64>;
}

impl<F: Fn(f64, f64, f64) -> Option<f64> + Sync> DepthSource for F {
    fn depth(&self, t: f64, u: f64, v: f64) -> Option<f64> {
        self(t, u, v)
    }
}

/// Pose sample closest in time to `t` (earlier sample on ties).
pub fn nearest_pose(poses: &[PoseSample], t: f64) -> Option<&PoseSample> {
    let i = poses.partition_point(|p| p.t < t);
    let after = poses.get(i);
    let before = i.checked_sub(1).and_then(|j| poses.get(j));
    match (before, after) {
        (Some(b), Some(a)) => Some(if t - b.t <= a.t - t { b } else { a }),
        (b, a) => b.or(a),
    }
}

/// World point of a detection: median depth over the five box samples,
/// deprojected at the box center, then mapped by `pose` and `alignment`.
pub fn detection_to_world(
    det: &DetectionRecord,
    depth_at: impl Fn(f64, f64) -> Option<f64>,
    pose: &PoseSample,
    alignment: &Isometry3<f64>,
    k: &CameraIntrinsics,
    cfg: &InspectionConfig,
) -> Result<Point3<f64>, InspectionError> {
    if (pose.t - det.t).abs() > cfg.max_skew {
        return Err(InspectionError::Unsynchronized {
            t: det.t,
            max_skew: cfg.max_skew,
        });
    }
    let mut z: Vec<f64> = det
        .depth_samples()
        .iter()
        .filter_map(|&(u, v)| depth_at(u, v))
        .filter(|z| z.is_finite() && *z > 0.0)
        .collect();
    if z.len() < 3 {
        return Err(InspectionError::Rejected(format!(
            "{} of 5 depth samples valid",
            z.len()
        )));
    }
    z.sort_by(f64::total_cmp);
    let n = z.len();
    let median = if n % 2 == 1 {
        z[n / 2]
    } else {
        0.5 * (z[n / 2 - 1] + z[n / 2])
    };
    if !(cfg.min_depth..=cfg.max_depth).contains(&median) {
        return Err(InspectionError::Rejected(format!(
            "median depth {median} m out of range"
        )));
    }
    let (u, v) = det.center();
    let cam = deproject(u, v, median, k)?;
    Ok(alignment * (pose.isometry() * cam))
}

/// Clusters of point indices: the connected components of the graph joining
/// points no further than `radius` apart. Components are ordered by their
/// lexicographically smallest point and members by position, so the result
/// does not depend on input order.
pub fn clusters(points: &[Point3<f64>], radius: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    let key = |i: &usize| (points[*i].x, points[*i].y, points[*i].z);
    order.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
            .then(a.cmp(b))
    });
    let r2 = radius * radius;
    let mut seen = vec![false; points.len()];
    let mut out = Vec::new();
    for (rank, &seed) in order.iter().enumerate() {
        if seen[seed] {
            continue;
        }
        seen[seed] = true;
        let mut members = vec![rank];
        let mut queue = VecDeque::from([seed]);
        while let Some(i) = queue.pop_front() {
            for (r, &j) in order.iter().enumerate() {
                if !seen[j] && (points[i] - points[j]).norm_squared() <= r2 {
                    seen[j] = true;
                    members.push(r);
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        out.push(members.into_iter().map(|r| order[r]).collect());
    }
    out
}

/// Merges weighted points into markers by single-linkage clustering.
pub fn aggregate(
    points: &[(Point3<f64>, f64)],
    merge_radius: f64,
) -> Result<Vec<RustMarker>, InspectionError> {
    if !(merge_radius > 0.0) {
        return Err(InspectionError::Invalid(format!(
            "merge radius must be > 0 (got {merge_radius})"
        )));
    }
    let pos: Vec<Point3<f64>> = points.iter().map(|p| p.0).collect();
    Ok(clusters(&pos, merge_radius)
        .into_iter()
        .map(|members| {
            let n = members.len() as f64;
            let center =
                Point3::from(members.iter().map(|&i| pos[i].coords).sum::<Vector3<f64>>() / n);
            let radius = members
                .iter()
                .map(|&i| (pos[i] - center).norm())
                .fold(MIN_MARKER_RADIUS, f64::max);
            let confidence = members.iter().map(|&i| points[i].1).sum::<f64>() / n;
            RustMarker {
                center,
                radius,
                support: members.len(),
                confidence,
            }
        })
        .collect())
}

/// Full pipeline: pose association, deprojection, clustering and path trace.
pub fn build_map(
    poses: &[PoseSample],
    detections: &[DetectionRecord],
    depth: &dyn DepthSource,
    k: &CameraIntrinsics,
    cfg: &InspectionConfig,
    exec: Exec,
) -> Result<InspectionMap, InspectionError> {
    k.validate()?;
    let first = poses.first().ok_or(InspectionError::EmptyPoses)?;
    if poses.windows(2).any(|w| !(w[0].t <= w[1].t)) {
        return Err(InspectionError::Invalid(
            "pose timestamps must be non-decreasing".into(),
        ));
    }
    for d in detections {
        d.validate(k)?;
    }
    let alignment = match cfg.alignment {
        Some(a) => a.try_into()?,
        None => first.isometry().inverse(),
    };
    let located = exec.map(detections, |det| {
        let pose = nearest_pose(poses, det.t).expect("non-empty");
        detection_to_world(
            det,
            |u, v| depth.depth(det.t, u, v),
            pose,
            &alignment,
            k,
            cfg,
        )
        .map(|p| (p, det.confidence))
    });
    let (mut dropped, mut rejected) = (0, 0);
    let mut points = Vec::with_capacity(located.len());
    for r in located {
        match r {
            Ok(p) => points.push(p),
            Err(InspectionError::Unsynchronized { .. }) => dropped += 1,
            Err(_) => rejected += 1,
        }
    }
    Ok(InspectionMap {
        markers: aggregate(&points, cfg.merge_radius)?,
        path: poses.iter().map(|p| alignment * p.position).collect(),
        alignment: RigidTransform::from(&alignment),
        dropped,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 500.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }

    #[test]
    fn deproject_examples() {
        let k = k();
        assert_eq!(
            deproject(k.cx, k.cy, 2.0, &k).unwrap(),
            Point3::new(0.0, 0.0, 2.0)
        );
        let wide = CameraIntrinsics { fx: 200.0, ..k };
        assert_eq!(
            deproject(wide.cx + wide.fx, wide.cy, 1.0, &wide).unwrap(),
            Point3::new(1.0, 0.0, 1.0)
        );
        assert!(matches!(
            deproject(10.0, 10.0, 0.0, &k),
            Err(InspectionError::InvalidDepth(_))
        ));
        assert!(matches!(
            deproject(-3.0, 10.0, 1.0, &k),
            Err(InspectionError::OutOfImage { .. })
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(k().validate().is_ok());
        assert!(CameraIntrinsics { cx: 700.0, ..k() }.validate().is_err());
        assert!(CameraIntrinsics { fy: 0.0, ..k() }.validate().is_err());
    }

    fn det(t: f64) -> DetectionRecord {
        DetectionRecord {
            t,
            bbox: [300.0, 220.0, 340.0, 260.0],
            confidence: 0.8,
            label: "rust".into(),
        }
    }

    fn identity_pose(t: f64) -> PoseSample {
        PoseSample::new(t, &Isometry3::identity())
    }

    #[test]
    fn identity_chain_returns_camera_point() {
        let cfg = InspectionConfig::default();
        let p = detection_to_world(
            &det(0.0),
            |_, _| Some(1.5),
            &identity_pose(0.0),
            &Isometry3::identity(),
            &k(),
            &cfg,
        )
        .unwrap();
        assert_eq!(p, deproject(320.0, 240.0, 1.5, &k()).unwrap());
    }

    #[test]
    fn translated_pose_shifts_point() {
        let cfg = InspectionConfig::default();
        let pose = PoseSample::new(0.0, &Isometry3::translation(1.0, 0.0, 0.0));
        let p = detection_to_world(
            &det(0.0),
            |_, _| Some(1.5),
            &pose,
            &Isometry3::identity(),
            &k(),
            &cfg,
        )
        .unwrap();
        assert_eq!(p, Point3::new(1.0, 0.0, 1.5));
    }

    #[test]
    fn depth_holes_and_range() {
        let cfg = InspectionConfig::default();
        let (pose, id) = (identity_pose(0.0), Isometry3::identity());
        // Two holes: median of the remaining three.
        let holes = |u: f64, v: f64| {
            if u < 320.0 {
                None
            } else {
                Some(if v < 240.0 { 1.0 } else { 2.0 })
            }
        };
        let p = detection_to_world(&det(0.0), holes, &pose, &id, &k(), &cfg).unwrap();
        assert_relative_eq!(p.z, 2.0);
        let three_holes = |u: f64, v: f64| (u > 320.0 && v > 240.0).then_some(1.0);
        assert!(matches!(
            detection_to_world(&det(0.0), three_holes, &pose, &id, &k(), &cfg),
            Err(InspectionError::Rejected(_))
        ));
        assert!(detection_to_world(&det(0.0), |_, _| Some(6.0), &pose, &id, &k(), &cfg).is_err());
        assert!(detection_to_world(&det(0.0), |_, _| Some(0.05), &pose, &id, &k(), &cfg).is_err());
        assert!(matches!(
            detection_to_world(&det(0.2), |_, _| Some(1.0), &pose, &id, &k(), &cfg),
            Err(InspectionError::Unsynchronized { .. })
        ));
    }

    #[test]
    fn nearest_pose_picks_closest() {
        let poses: Vec<_> = [0.0, 0.1, 0.2].iter().map(|&t| identity_pose(t)).collect();
        assert_eq!(nearest_pose(&poses, -1.0).unwrap().t, 0.0);
        assert_eq!(nearest_pose(&poses, 0.14).unwrap().t, 0.1);
        assert_eq!(nearest_pose(&poses, 0.16).unwrap().t, 0.2);
        assert_eq!(nearest_pose(&poses, 9.0).unwrap().t, 0.2);
        assert!(nearest_pose(&[], 0.0).is_none());
    }

    #[test]
    fn aggregate_examples() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let near = aggregate(&[(a, 0.5), (Point3::new(0.01, 0.0, 0.0), 1.0)], 0.05).unwrap();
        assert_eq!(near.len(), 1);
        assert_eq!(near[0].support, 2);
        assert_relative_eq!(near[0].confidence, 0.75);
        assert_relative_eq!(near[0].radius, MIN_MARKER_RADIUS);
        let far = aggregate(&[(a, 0.5), (Point3::new(1.0, 0.0, 0.0), 1.0)], 0.05).unwrap();
        assert_eq!(far.len(), 2);
        assert!(aggregate(&[], 0.05).unwrap().is_empty());
        assert!(aggregate(&[(a, 1.0)], 0.0).is_err());
    }

    #[test]
    fn chains_link_through_neighbours() {
        let pts: Vec<_> = (0..5)
            .map(|i| Point3::new(0.04 * i as f64, 0.0, 0.0))
            .collect();
        assert_eq!(clusters(&pts, 0.05), vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn build_map_without_detections_keeps_path() {
        let poses: Vec<_> = (0..4)
            .map(|i| PoseSample::new(i as f64, &Isometry3::translation(i as f64, 1.0, 0.0)))
            .collect();
        let depth = |_: f64, _: f64, _: f64| Some(1.0);
        let map = build_map(
            &poses,
            &[],
            &depth,
            &k(),
            &InspectionConfig::default(),
            Exec::Sequential,
        )
        .unwrap();
        assert!(map.markers.is_empty());
        // Default alignment puts the first pose at the origin.
        assert_eq!(map.path.len(), 4);
        assert!(map.path[0].coords.norm() < 1e-15);
        assert_relative_eq!(map.path[3], Point3::new(3.0, 0.0, 0.0));
        assert!(matches!(
            build_map(
                &[],
                &[],
                &depth,
                &k(),
                &InspectionConfig::default(),
                Exec::Sequential
            ),
            Err(InspectionError::EmptyPoses)
        ));
    }

    #[test]
    fn build_map_single_detection_and_drops() {
        let poses = vec![identity_pose(0.0), identity_pose(1.0)];
        let depth = |_: f64, _: f64, _: f64| Some(2.0);
        let dets = vec![det(0.0), det(0.5)];
        let map = build_map(
            &poses,
            &dets,
            &depth,
            &k(),
            &InspectionConfig::default(),
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(map.markers.len(), 1);
        assert_eq!(
            map.markers[0].center,
            deproject(320.0, 240.0, 2.0, &k()).unwrap()
        );
        assert_eq!(map.dropped, 1);
        assert_eq!(map.rejected, 0);
    }

    #[test]
    fn pose_rows_round_trip() {
        let iso = Isometry3::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.1, -0.2, 0.3));
        let p = PoseSample::new(0.5, &iso);
        let back = PoseSample::try_from(PoseRow::from(&p)).unwrap();
        assert!((back.isometry().to_homogeneous() - iso.to_homogeneous()).norm() < 1e-15);
        let bad = PoseRow {
            qw: 0.5,
            ..PoseRow::from(&p)
        };
        assert!(PoseSample::try_from(bad).is_err());
        let rt = RigidTransform::from(&iso);
        let iso2: Isometry3<f64> = rt.try_into().unwrap();
        assert!((iso2.to_homogeneous() - iso.to_homogeneous()).norm() < 1e-15);
    }
}

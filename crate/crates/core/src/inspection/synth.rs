//! Synthetic camera data: color and depth frames ray-cast from a structure
//! model with painted rust spots, and camera poses taken from a simulated
//! trajectory.

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use nalgebra::{
    Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    detect_rust_stub, CameraIntrinsics, DepthSource, DetectionRecord, InspectionError, PoseSample,
    StubConfig,
};
use crate::geometry::{Structure, Uv};
use crate::simulator::{run_scenario, RobotState, Scenario};
use crate::Exec;

pub const RUST_COLOR: Rgb<u8> = Rgb([150, 72, 30]);
pub const NO_RETURN_COLOR: Rgb<u8> = Rgb([0, 0, 0]);

/// A round rust patch painted on a surface patch, centered at `(u, v)`
/// with `radius` measured in the developed plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RustSpot {
    pub patch: String,
    pub u: f64,
    pub v: f64,
    pub radius: f64,
}

/// Camera placement on the robot body: `height` along the surface normal
/// and `forward` along the heading from the body center, looking forward
/// and tilted `pitch` radians towards the surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraMount {
    pub height: f64,
    pub forward: f64,
    pub pitch: f64,
}

impl Default for CameraMount {
    fn default() -> Self {
        Self {
            height: 0.08,
            forward: 0.0,
            pitch: 15f64.to_radians(),
        }
    }
}

/// Depth image in meters along the optical axis; `0` marks no return.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl DepthImage {
    fn pixel(&self, x: i64, y: i64) -> Option<f64> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return None;
        }
        let z = self.data[y as usize * self.width as usize + x as usize];
        (z > 0.0).then_some(z)
    }

    /// Depth at `(u, v)`: bilinear in inverse depth when the four
    /// surrounding pixels are valid (exact on planes), otherwise the
    /// nearest pixel.
    pub fn at(&self, u: f64, v: f64) -> Option<f64> {
        let (x0, y0) = (u.floor() as i64, v.floor() as i64);
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let quad = [
            self.pixel(x0, y0),
            self.pixel(x0 + 1, y0),
            self.pixel(x0, y0 + 1),
            self.pixel(x0 + 1, y0 + 1),
        ];
        if let [Some(a), Some(b), Some(c), Some(d)] = quad {
            let w = (1.0 - fy) * ((1.0 - fx) / a + fx / b) + fy * ((1.0 - fx) / c + fx / d);
            return Some(1.0 / w);
        }
        self.pixel(u.round() as i64, v.round() as i64)
    }

    /// 16-bit millimeter encoding; depths beyond the range saturate to no return.
    pub fn to_png16(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        let mm = self
            .data
            .iter()
            .map(|&z| {
                let v = (z * 1000.0).round();
                if v > 0.0 && v <= u16::MAX as f64 {
                    v as u16
                } else {
                    0
                }
            })
            .collect();
        ImageBuffer::from_raw(self.width, self.height, mm).expect("buffer matches dimensions")
    }

    pub fn from_png16(img: &ImageBuffer<Luma<u16>, Vec<u16>>) -> Self {
        let (width, height) = img.dimensions();
        Self {
            width,
            height,
            data: img.pixels().map(|p| p.0[0] as f64 / 1000.0).collect(),
        }
    }
}

/// Depth frames keyed by capture time.
#[derive(Clone, Debug, Default)]
pub struct DepthFrames {
    pub frames: Vec<(f64, DepthImage)>,
}

/// Detections match a depth frame whose capture time is within this of theirs, s.
pub const FRAME_TIME_TOLERANCE: f64 = 1e-6;

impl DepthSource for DepthFrames {
    fn depth(&self, t: f64, u: f64, v: f64) -> Option<f64> {
        let (_, img) = self
            .frames
            .iter()
            .find(|(ft, _)| (ft - t).abs() <= FRAME_TIME_TOLERANCE)?;
        img.at(u, v)
    }
}

/// A structure with rust spots resolved to patch indices and developed centers.
pub struct Scene<'a> {
    structure: &'a Structure,
    spots: Vec<(usize, Vector2<f64>, f64)>,
    centers: Vec<Point3<f64>>,
}

impl<'a> Scene<'a> {
    pub fn new(structure: &'a Structure, spots: &[RustSpot]) -> Result<Self, InspectionError> {
        let mut resolved = Vec::with_capacity(spots.len());
        let mut centers = Vec::with_capacity(spots.len());
        for s in spots {
            let idx = structure
                .patches()
                .iter()
                .position(|p| p.id == s.patch)
                .ok_or_else(|| {
                    InspectionError::Invalid(format!("rust spot on unknown patch '{}'", s.patch))
                })?;
            let patch = &structure.patches()[idx];
            let uv = Uv::new(s.u, s.v);
            if !(s.radius > 0.0) || !patch.contains(uv, 0.0) {
                return Err(InspectionError::Invalid(format!(
                    "rust spot {s:?} is not on its patch"
                )));
            }
            resolved.push((idx, patch.develop().to_plane(uv), s.radius));
            centers.push(patch.point(uv));
        }
        Ok(Self {
            structure,
            spots: resolved,
            centers,
        })
    }

    /// World centers of the rust spots, in input order.
    pub fn spot_centers(&self) -> &[Point3<f64>] {
        &self.centers
    }

    fn shade(&self, patch: usize, uv: Uv) -> Rgb<u8> {
        let xy = self.structure.patches()[patch].develop().to_plane(uv);
        if self
            .spots
            .iter()
            .any(|(p, c, r)| *p == patch && (xy - c).norm() <= *r)
        {
            return RUST_COLOR;
        }
        let g = 100 + 25 * (patch % 4) as u8;
        Rgb([g, g, g])
    }

    /// Color and depth frames seen from `camera` (world from camera).
    pub fn render(
        &self,
        k: &CameraIntrinsics,
        camera: &Isometry3<f64>,
        exec: Exec,
    ) -> (RgbImage, DepthImage) {
        let (w, h) = (k.width as usize, k.height as usize);
        let origin = Point3::from(camera.translation.vector);
        let mut pixels = vec![(NO_RETURN_COLOR, 0.0); w * h];
        exec.for_each_chunk(&mut pixels, w, |row, out| {
            for (col, px) in out.iter_mut().enumerate() {
                let ray = k.ray(col as f64, row as f64);
                let dir = camera.rotation * ray.normalize();
                if let Some((t, patch, uv)) = self.structure.ray_cast(&origin, &dir) {
                    *px = (self.shade(patch, uv), t / ray.norm());
                }
            }
        });
        let color = RgbImage::from_fn(k.width, k.height, |x, y| {
            pixels[y as usize * w + x as usize].0
        });
        let depth = DepthImage {
            width: k.width,
            height: k.height,
            data: pixels.iter().map(|p| p.1).collect(),
        };
        (color, depth)
    }
}

/// World pose of the camera for a robot state.
pub fn camera_pose(
    structure: &Structure,
    state: &RobotState,
    mount: &CameraMount,
) -> Isometry3<f64> {
    let patch = structure
        .patch(&state.pose.patch)
        .expect("state on a known patch");
    let tf = patch.tangent_frame(state.pose.uv);
    let forward = tf.direction(state.pose.heading);
    let up = tf.normal;
    let position = patch.point(state.pose.uv) + up * mount.height + forward * mount.forward;
    let (s, c) = mount.pitch.sin_cos();
    let z = forward * c - up * s;
    let x = forward.cross(&up);
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Isometry3::from_parts(
        Translation3::from(position.coords),
        UnitQuaternion::from_rotation_matrix(&rot),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkthroughConfig {
    pub intrinsics: CameraIntrinsics,
    pub mount: CameraMount,
    /// Render one frame every this many simulator steps.
    pub frame_stride: usize,
}

impl Default for WalkthroughConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics {
                fx: 300.0,
                fy: 300.0,
                cx: 160.0,
                cy: 120.0,
                width: 320,
                height: 240,
            },
            mount: CameraMount::default(),
            frame_stride: 5,
        }
    }
}

pub struct RenderedFrame {
    pub t: f64,
    pub color: RgbImage,
    pub depth: DepthImage,
}

pub struct Walkthrough {
    /// Logged camera poses, one per simulator state, with the scenario's
    /// position noise applied.
    pub poses: Vec<PoseSample>,
    /// Noise-free camera poses.
    pub true_poses: Vec<PoseSample>,
    pub frames: Vec<RenderedFrame>,
    /// World centers of the rust spots.
    pub truth: Vec<Point3<f64>>,
}

impl Walkthrough {
    /// Stub detections over every rendered frame, in frame order.
    pub fn detections(
        &self,
        k: &CameraIntrinsics,
        cfg: &StubConfig,
    ) -> Result<Vec<DetectionRecord>, InspectionError> {
        let mut out = Vec::new();
        for f in &self.frames {
            out.extend(detect_rust_stub(&f.color, f.t, k, cfg)?);
        }
        Ok(out)
    }
}

impl DepthSource for Walkthrough {
    fn depth(&self, t: f64, u: f64, v: f64) -> Option<f64> {
        let f = self
            .frames
            .iter()
            .find(|f| (f.t - t).abs() <= FRAME_TIME_TOLERANCE)?;
        f.depth.at(u, v)
    }
}

/// Runs `scenario`, records a camera pose per state and renders frames.
/// Tracker coordinates coincide with structure coordinates.
pub fn walkthrough(
    scenario: &Scenario,
    spots: &[RustSpot],
    cfg: &WalkthroughConfig,
    exec: Exec,
) -> Result<Walkthrough, InspectionError> {
    cfg.intrinsics.validate()?;
    if cfg.frame_stride == 0 {
        return Err(InspectionError::Invalid("frame_stride must be >= 1".into()));
    }
    let out = run_scenario(scenario).map_err(|e| InspectionError::Invalid(e.to_string()))?;
    let structure = Structure::new(scenario.structure.clone())
        .map_err(|e| InspectionError::Invalid(e.to_string()))?;
    let scene = Scene::new(&structure, spots)?;
    let noise = Normal::new(0.0, scenario.pose_noise_sigma)
        .map_err(|e| InspectionError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let cameras: Vec<(f64, Isometry3<f64>)> = out
        .trajectory
        .iter()
        .map(|s| (s.time, camera_pose(&structure, s, &cfg.mount)))
        .collect();
    let true_poses: Vec<PoseSample> = cameras
        .iter()
        .map(|(t, iso)| PoseSample::new(*t, iso))
        .collect();
    let poses = true_poses
        .iter()
        .map(|p| {
            let mut p = p.clone();
            if scenario.pose_noise_sigma > 0.0 {
                p.position += Vector3::from_fn(|_, _| noise.sample(&mut rng));
            }
            p
        })
        .collect();
    let frames = cameras
        .iter()
        .step_by(cfg.frame_stride)
        .map(|(t, iso)| {
            let (color, depth) = scene.render(&cfg.intrinsics, iso, exec);
            RenderedFrame {
                t: *t,
                color,
                depth,
            }
        })
        .collect();
    Ok(Walkthrough {
        poses,
        true_poses,
        frames,
        truth: scene.spot_centers().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, StructureModel, SurfacePatch};

    fn floor() -> Structure {
        Structure::new(StructureModel::new(
            vec![SurfacePatch::plane(
                "floor",
                Frame::identity(),
                [-2.0, 2.0],
                [-2.0, 2.0],
            )],
            vec![],
        ))
        .unwrap()
    }

    #[test]
    fn looking_straight_down_sees_flat_depth() {
        let s = floor();
        let scene = Scene::new(
            &s,
            &[RustSpot {
                patch: "floor".into(),
                u: 0.0,
                v: 0.0,
                radius: 0.05,
            }],
        )
        .unwrap();
        let k = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 20.0,
            cy: 15.0,
            width: 40,
            height: 30,
        };
        // Camera 0.5 m above the floor looking down.
        let down = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
        let cam = Isometry3::from_parts(Translation3::new(0.0, 0.0, 0.5), down);
        let (color, depth) = scene.render(&k, &cam, Exec::Sequential);
        assert!(depth.data.iter().all(|z| (z - 0.5).abs() < 1e-12));
        assert_eq!(*color.get_pixel(20, 15), RUST_COLOR);
        assert_ne!(*color.get_pixel(0, 0), RUST_COLOR);
        let (c2, d2) = scene.render(&k, &cam, Exec::Parallel);
        assert_eq!((c2, d2), (color, depth));
    }

    #[test]
    fn png16_round_trip_is_millimetric() {
        let d = DepthImage {
            width: 2,
            height: 1,
            data: vec![1.2344, 0.0],
        };
        let back = DepthImage::from_png16(&d.to_png16());
        assert_eq!(back.data, vec![1.234, 0.0]);
        assert_eq!(back.at(1.0, 0.0), None);
        assert_eq!(back.at(0.4, 0.2), Some(1.234));
        // Inverse depth is interpolated.
        let d = DepthImage {
            width: 2,
            height: 2,
            data: vec![1.0, 2.0, 1.0, 2.0],
        };
        assert!((d.at(0.5, 0.3).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(back.at(-1.0, 0.0), None);
    }

    #[test]
    fn spots_must_lie_on_their_patch() {
        let s = floor();
        assert!(Scene::new(
            &s,
            &[RustSpot {
                patch: "wall".into(),
                u: 0.0,
                v: 0.0,
                radius: 0.05
            }]
        )
        .is_err());
        assert!(Scene::new(
            &s,
            &[RustSpot {
                patch: "floor".into(),
                u: 3.0,
                v: 0.0,
                radius: 0.05
            }]
        )
        .is_err());
    }
}

//! Pose logs, detection logs, depth frame sets and map exports.
//!
//! Pose logs are CSV `t,x,y,z,qx,qy,qz,qw` or JSONL rows with those keys.
//! Detection logs are JSONL. Depth frames are 16-bit PNG files in
//! millimeters listed in an index CSV `t,file`, with paths relative to the
//! index.

use std::io::Write;
use std::path::{Path, PathBuf};

use image::ImageReader;
use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::synth::{DepthFrames, DepthImage};
use super::{DetectionRecord, InspectionError, InspectionMap, PoseRow, PoseSample};
use crate::geometry::{Structure, Uv};
use crate::scenario::{create, read_jsonl, read_text, save_json, save_jsonl, IoError};

fn parse_err(path: &Path, message: impl ToString) -> InspectionError {
    InspectionError::Io(IoError::Parse {
        path: path.to_path_buf(),
        message: message.to_string(),
    })
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

pub fn load_poses(path: &Path) -> Result<Vec<PoseSample>, InspectionError> {
    let text = read_text(path)?;
    let rows: Vec<PoseRow> = if is_jsonl(path) {
        read_jsonl(text.as_bytes()).map_err(|e| parse_err(path, e))?
    } else {
        csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(path, e))?
    };
    rows.into_iter().map(PoseSample::try_from).collect()
}

pub fn save_poses(path: &Path, poses: &[PoseSample]) -> Result<(), InspectionError> {
    let rows: Vec<PoseRow> = poses.iter().map(PoseRow::from).collect();
    if is_jsonl(path) {
        return Ok(save_jsonl(path, &rows)?);
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in &rows {
        w.serialize(r).map_err(|e| parse_err(path, e))?;
    }
    w.flush().map_err(|e| parse_err(path, e))
}

pub fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>, InspectionError> {
    read_jsonl(read_text(path)?.as_bytes()).map_err(|e| parse_err(path, e))
}

pub fn save_detections(path: &Path, detections: &[DetectionRecord]) -> Result<(), InspectionError> {
    Ok(save_jsonl(path, detections)?)
}

#[derive(Serialize, Deserialize)]
struct IndexRow {
    t: f64,
    file: PathBuf,
}

/// Writes `depth_NNNN.png` files next to `index` and the index itself.
pub fn save_depth_frames(
    index: &Path,
    frames: &[(f64, &DepthImage)],
) -> Result<(), InspectionError> {
    let dir = index.parent().unwrap_or(Path::new(""));
    let mut w = csv::Writer::from_writer(create(index)?);
    for (i, (t, depth)) in frames.iter().enumerate() {
        let file = PathBuf::from(format!("depth_{i:04}.png"));
        let path = dir.join(&file);
        depth
            .to_png16()
            .save(&path)
            .map_err(|e| parse_err(&path, e))?;
        w.serialize(IndexRow { t: *t, file })
            .map_err(|e| parse_err(index, e))?;
    }
    w.flush().map_err(|e| parse_err(index, e))
}

pub fn load_depth_frames(index: &Path) -> Result<DepthFrames, InspectionError> {
    let dir = index.parent().unwrap_or(Path::new(""));
    let text = read_text(index)?;
    let rows: Vec<IndexRow> = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| parse_err(index, e))?;
    let mut frames = Vec::with_capacity(rows.len());
    for row in rows {
        let path = dir.join(&row.file);
        let img = ImageReader::open(&path)
            .map_err(|e| parse_err(&path, e))?
            .decode()
            .map_err(|e| parse_err(&path, e))?
            .into_luma16();
        frames.push((row.t, DepthImage::from_png16(&img)));
    }
    Ok(DepthFrames { frames })
}

pub fn save_map(path: &Path, map: &InspectionMap) -> Result<(), InspectionError> {
    Ok(save_json(path, map)?)
}

pub fn load_map(path: &Path) -> Result<InspectionMap, InspectionError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| parse_err(path, e))
}

/// Points on every patch at roughly `spacing` meters, mapped by `to_world`.
pub fn structure_samples(
    structure: &Structure,
    spacing: f64,
    to_world: &Isometry3<f64>,
) -> Vec<Point3<f64>> {
    let mut out = Vec::new();
    for patch in structure.patches() {
        let dev = patch.develop();
        let ([x0, x1], [y0, y1]) = patch.developed_bounds();
        let nx = ((x1 - x0) / spacing).ceil().max(1.0) as usize;
        let ny = ((y1 - y0) / spacing).ceil().max(1.0) as usize;
        for i in 0..=nx {
            for j in 0..=ny {
                let xy = nalgebra::Vector2::new(
                    x0 + (x1 - x0) * i as f64 / nx as f64,
                    y0 + (y1 - y0) * j as f64 / ny as f64,
                );
                let uv: Uv = dev.to_surface(xy);
                out.push(to_world * patch.point(uv));
            }
        }
    }
    out
}

const STRUCTURE_RGB: [u8; 3] = [160, 160, 160];
const MARKER_RGB: [u8; 3] = [0, 200, 0];
const PATH_RGB: [u8; 3] = [40, 90, 220];

/// Points on a sphere, evenly spread by the golden-angle spiral.
fn sphere(center: &Point3<f64>, radius: f64, n: usize) -> impl Iterator<Item = Point3<f64>> + '_ {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n).map(move |i| {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let a = golden * i as f64;
        center + Vector3::new(r * a.cos(), r * a.sin(), z) * radius
    })
}

/// ASCII PLY point cloud: structure samples in gray, the camera path in
/// blue and each marker as a green sphere of points.
pub fn write_ply<W: Write>(
    mut w: W,
    map: &InspectionMap,
    structure: &[Point3<f64>],
) -> std::io::Result<()> {
    const PER_MARKER: usize = 64;
    let n = structure.len() + map.path.len() + map.markers.len() * PER_MARKER;
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {n}")?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    writeln!(
        w,
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header"
    )?;
    let mut put =
        |p: &Point3<f64>, [r, g, b]: [u8; 3]| writeln!(w, "{} {} {} {r} {g} {b}", p.x, p.y, p.z);
    for p in structure {
        put(p, STRUCTURE_RGB)?;
    }
    for p in &map.path {
        put(p, PATH_RGB)?;
    }
    for m in &map.markers {
        for p in sphere(&m.center, m.radius, PER_MARKER) {
            put(&p, MARKER_RGB)?;
        }
    }
    Ok(())
}

pub fn save_ply(
    path: &Path,
    map: &InspectionMap,
    structure: &[Point3<f64>],
) -> Result<(), InspectionError> {
    let mut w = create(path)?;
    write_ply(&mut w, map, structure)
        .and_then(|_| w.flush())
        .map_err(|e| parse_err(path, e))
}

//! On-disk formats for structures, robot parameters, scenarios, command
//! timelines and simulator output.
//!
//! Structure, parameter and scenario files are YAML (JSON is accepted as
//! well). Relative paths inside a scenario resolve against the scenario's
//! directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{StructureModel, SurfacePose};
use crate::kinematics::SteeringState;
use crate::simulator::{CommandSource, RobotState, Scenario, SimConfig, TimedCommand};
use crate::statics::RobotParams;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(path: &Path, message: impl ToString) -> Self {
        IoError::Parse {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

/// Parses a YAML (or JSON) document.
pub fn load_yaml<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    serde_yaml::from_str(&text).map_err(|e| IoError::parse(path, e))
}

pub fn load_structure(path: &Path) -> Result<StructureModel, IoError> {
    load_yaml(path)
}

pub fn load_params(path: &Path) -> Result<RobotParams, IoError> {
    load_yaml(path)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FileOr<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: DeserializeOwned> FileOr<T> {
    fn resolve(self, base: &Path) -> Result<T, IoError> {
        match self {
            FileOr::Inline(v) => Ok(v),
            FileOr::Path(p) => load_yaml(&base.join(p)),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CommandsRef {
    /// `interactive`, or a path to a CSV/JSONL timeline.
    Name(String),
    Rows(Vec<TimedCommand>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    #[allow(dead_code)]
    version: Option<u32>,
    structure: FileOr<StructureModel>,
    #[serde(default)]
    params: Option<FileOr<RobotParams>>,
    #[serde(default)]
    config: SimConfig,
    initial_pose: SurfacePose,
    #[serde(default)]
    initial_steering: SteeringState,
    #[serde(default)]
    commands: Option<CommandsRef>,
    dt: f64,
    duration: f64,
    #[serde(default)]
    gravity: Option<Vector3<f64>>,
    #[serde(default)]
    pose_noise_sigma: f64,
    #[serde(default)]
    seed: u64,
}

/// Loads a scenario, resolving referenced structure, parameter and command files.
pub fn load_scenario(path: &Path) -> Result<Scenario, IoError> {
    let file: ScenarioFile = load_yaml(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let commands = match file.commands {
        None => CommandSource::Interactive,
        Some(CommandsRef::Name(name)) if name == "interactive" => CommandSource::Interactive,
        Some(CommandsRef::Name(name)) => CommandSource::Scripted(load_commands(&base.join(name))?),
        Some(CommandsRef::Rows(rows)) => CommandSource::Scripted(rows),
    };
    Ok(Scenario {
        structure: file.structure.resolve(base)?,
        params: match file.params {
            Some(p) => p.resolve(base)?,
            None => RobotParams::default(),
        },
        config: file.config,
        initial_pose: file.initial_pose,
        initial_steering: file.initial_steering,
        commands,
        dt: file.dt,
        duration: file.duration,
        gravity: file.gravity.unwrap_or(-Vector3::z()),
        pose_noise_sigma: file.pose_noise_sigma,
        seed: file.seed,
    })
}

/// Reads a command timeline: CSV with header `t,delta_front,delta_back,v_back,v_front`
/// (blank `v_front` = automatic), or JSONL when the extension is `.jsonl`.
pub fn load_commands(path: &Path) -> Result<Vec<TimedCommand>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        return read_jsonl(BufReader::new(file)).map_err(|e| IoError::parse(path, e));
    }
    read_commands_csv(file).map_err(|e| IoError::parse(path, e))
}

pub fn read_commands_csv<R: Read>(reader: R) -> Result<Vec<TimedCommand>, csv::Error> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader)
        .deserialize()
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IoError::io(path, e))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| IoError::parse(path, e))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| IoError::io(path, e))
}

pub fn save_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    write_jsonl(create(path)?, items).map_err(|e| IoError::io(path, e))
}

#[derive(Serialize)]
struct TrajectoryRow<'a> {
    t: f64,
    patch: &'a str,
    u: f64,
    v: f64,
    heading: f64,
    roll: f64,
    margin: f64,
    delta_front: f64,
    delta_back: f64,
    x: f64,
    y: f64,
    z: f64,
}

/// Trajectory CSV: `t,patch,u,v,heading,roll,margin,delta_front,delta_back,x,y,z`.
/// An unbounded margin is written as `inf`.
pub fn write_trajectory_csv<W: Write>(writer: W, states: &[RobotState]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for s in states {
        w.serialize(TrajectoryRow {
            t: s.time,
            patch: &s.pose.patch,
            u: s.pose.uv.u,
            v: s.pose.uv.v,
            heading: s.pose.heading,
            roll: s.roll,
            margin: s.margin,
            delta_front: s.steering.delta_front,
            delta_back: s.steering.delta_back,
            x: s.center.x,
            y: s.center.y,
            z: s.center.z,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory(path: &Path, states: &[RobotState]) -> Result<(), IoError> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return save_jsonl(path, states);
    }
    write_trajectory_csv(create(path)?, states).map_err(|e| IoError::parse(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commands_csv_blank_front_is_auto() {
        let text = "t,delta_front,delta_back,v_back,v_front\n0,0,0,0.1,\n1.5,0.2,0,0.05,0.06\n";
        let rows = read_commands_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].v_front, None);
        assert_eq!(rows[1].v_front, Some(0.06));
        assert_eq!(rows[1].t, 1.5);
    }

    #[test]
    fn jsonl_round_trip() {
        let rows = vec![TimedCommand {
            t: 0.5,
            delta_front: 0.1,
            delta_back: 0.0,
            v_back: 0.1,
            v_front: None,
        }];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &rows).unwrap();
        let back: Vec<TimedCommand> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }
}

//! The `magbot` command line.
//!
//! Exit codes: 0 on success, 1 when a check the caller asked to enforce
//! fails (`size --strict`, a replay hash mismatch), 2 on any error.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use magbot_core::geometry::Structure;
use magbot_core::inspection::io::{
    load_depth_frames, load_detections, load_poses, save_map, save_ply, structure_samples,
};
use magbot_core::inspection::{build_map, CameraIntrinsics, RigidTransform};
use magbot_core::scenario::{
    load_params, load_scenario, load_structure, load_yaml, save_json, save_jsonl, save_trajectory,
};
use magbot_core::simulator::{
    run_scenario, traversability_report, SimConfig, TraversabilityReport,
};
use magbot_core::statics::{actuator_feasibility, CornerLoadCase, FeasibilityReport, RobotParams};
use magbot_core::Exec;
use nalgebra::Isometry3;
use serde::Serialize;

use crate::config::Config;
use crate::server::{self, ServeOptions};
use crate::world::replay;

#[derive(Debug, Parser)]
#[command(
    name = "magbot",
    version,
    about = "Magnetic climbing robot simulator, sizing and inspection tools"
)]
pub struct Cli {
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Check actuator and adhesion sizing for a parameter file.
    Size(SizeArgs),
    /// Run a scripted scenario and write trajectory, events and summary.
    Simulate(SimulateArgs),
    /// Build a rust map from pose, detection and depth logs.
    Inspect(InspectArgs),
    /// Serve a scenario to teleoperation clients over WebSocket.
    Serve(ServeArgs),
    /// Re-run a session log and compare trajectory hashes.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SizeArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// Also check every patch and joint of this structure.
    #[arg(long)]
    pub structure: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    /// Exit with status 1 when any check fails.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Alignment {
    /// Poses are already in the world frame.
    Identity,
    /// The first pose defines the world frame.
    First,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Pose log, CSV or JSONL.
    #[arg(long)]
    pub poses: PathBuf,
    /// Detection log, JSONL.
    #[arg(long)]
    pub detections: PathBuf,
    /// Depth frame index CSV.
    #[arg(long)]
    pub depth: PathBuf,
    /// Camera intrinsics, JSON or YAML.
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Gateway TOML; only its `[inspection]` table is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the alignment from the config file.
    #[arg(long, value_enum)]
    pub alignment: Option<Alignment>,
    /// Structure drawn into the point cloud, in the pose frame.
    #[arg(long)]
    pub structure: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub telemetry_hz: Option<f64>,
    #[arg(long)]
    pub realtime_factor: Option<f64>,
    #[arg(long)]
    pub v_max: Option<f64>,
    #[arg(long)]
    pub max_angle_deg: Option<f64>,
    /// Session log to record.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Stop after this many simulated seconds instead of waiting for Ctrl-C.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Inspection map whose marker count is reported in telemetry.
    #[arg(long)]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Trajectory CSV (or JSONL by extension) of the replayed run.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match cli.command {
        Cmd::Size(a) => size(&a),
        Cmd::Simulate(a) => simulate(&a),
        Cmd::Inspect(a) => inspect(&a, exec),
        Cmd::Serve(a) => serve(a),
        Cmd::Replay(a) => replay_cmd(&a),
    }
}

#[derive(Serialize)]
struct SizeReport {
    feasibility: FeasibilityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    traversability: Option<TraversabilityReport>,
}

/// Worst-case corner loads: both corner-hit faces of an internal corner, and
/// the single point contact of an external corner.
pub fn corner_cases(p: &RobotParams, cfg: &SimConfig) -> [CornerLoadCase; 2] {
    let weight = p.weight();
    let hit = p.magnet_force * cfg.corner_hit_factor;
    [
        CornerLoadCase {
            f_2_1: hit,
            f_2_2: hit,
            weight,
        },
        CornerLoadCase {
            f_2_1: 0.0,
            f_2_2: p.magnet_force * cfg.point_contact_factor,
            weight,
        },
    ]
}

fn size(a: &SizeArgs) -> anyhow::Result<ExitCode> {
    let params = load_params(&a.params)?;
    let cfg = SimConfig::default();
    let feasibility = actuator_feasibility(&params, &corner_cases(&params, &cfg));
    let traversability = match &a.structure {
        Some(p) => Some(traversability_report(&load_structure(p)?, &params, &cfg)?),
        None => None,
    };
    let pass = feasibility.pass && traversability.as_ref().is_none_or(|t| t.pass);
    if a.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&SizeReport {
                feasibility,
                traversability
            })?
        );
    } else {
        println!("{feasibility}");
        if let Some(t) = traversability {
            println!("\n{t}");
        }
    }
    Ok(if a.strict && !pass {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn simulate(a: &SimulateArgs) -> anyhow::Result<ExitCode> {
    let scenario = load_scenario(&a.scenario)?;
    let out = run_scenario(&scenario)?;
    create_dir(&a.out)?;
    save_trajectory(&a.out.join("trajectory.csv"), &out.trajectory)?;
    save_jsonl(&a.out.join("events.jsonl"), &out.events)?;
    save_json(&a.out.join("summary.json"), &out.summary)?;
    let s = &out.summary;
    println!(
        "{} steps, {:.3} s, distance {:.4} m, joints crossed {}, min margin {}, events {:?}",
        s.steps,
        s.duration,
        s.distance,
        s.joints_crossed,
        if s.min_margin.is_finite() {
            format!("{:.3}", s.min_margin)
        } else {
            "unbounded".into()
        },
        s.event_counts,
    );
    println!("trajectory hash {}", s.trajectory_hash);
    Ok(ExitCode::SUCCESS)
}

fn inspect(a: &InspectArgs, exec: Exec) -> anyhow::Result<ExitCode> {
    let mut cfg = Config::load(a.config.as_deref())?.inspection;
    match a.alignment {
        Some(Alignment::Identity) => {
            cfg.alignment = Some(RigidTransform::from(&Isometry3::identity()))
        }
        Some(Alignment::First) => cfg.alignment = None,
        None => {}
    }
    let k: CameraIntrinsics = load_yaml(&a.intrinsics)?;
    let poses = load_poses(&a.poses)?;
    let detections = load_detections(&a.detections)?;
    let depth = load_depth_frames(&a.depth)?;
    let map = build_map(&poses, &detections, &depth, &k, &cfg, exec)?;
    let samples = match &a.structure {
        Some(p) => {
            let structure = Structure::new(load_structure(p)?)?;
            let to_world = Isometry3::try_from(map.alignment)?;
            structure_samples(&structure, 0.02, &to_world)
        }
        None => Vec::new(),
    };
    create_dir(&a.out)?;
    save_map(&a.out.join("map.json"), &map)?;
    save_ply(&a.out.join("map.ply"), &map, &samples)?;
    println!(
        "{} markers from {} detections ({} unsynchronized, {} rejected)",
        map.markers.len(),
        detections.len(),
        map.dropped,
        map.rejected
    );
    for m in &map.markers {
        let c = m.center;
        println!(
            "  ({:.4}, {:.4}, {:.4}) r={:.3} support={}",
            c.x, c.y, c.z, m.radius, m.support
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// Config file, then environment, then flags.
fn serve_config(a: &ServeArgs, env: impl Fn(&str) -> Option<String>) -> anyhow::Result<Config> {
    let mut c = Config::load(a.config.as_deref())?;
    c.apply_env(env)?;
    if let Some(v) = &a.bind {
        c.server.bind = v.clone();
    }
    if let Some(v) = a.port {
        c.server.port = v;
    }
    if let Some(v) = a.telemetry_hz {
        c.server.telemetry_hz = v;
    }
    if let Some(v) = a.realtime_factor {
        c.server.realtime_factor = v;
    }
    if let Some(v) = a.v_max {
        c.limits.v_max = v;
    }
    if let Some(v) = a.max_angle_deg {
        c.limits.max_angle_deg = v;
    }
    c.validate()?;
    Ok(c)
}

fn serve(a: ServeArgs) -> anyhow::Result<ExitCode> {
    let config = serve_config(&a, |k| std::env::var(k).ok())?;
    let scenario = load_scenario(&a.scenario)?;
    let markers = match &a.map {
        Some(p) => magbot_core::inspection::io::load_map(p)?.markers.len(),
        None => 0,
    };
    let opts = ServeOptions {
        config,
        scenario,
        log: a.log,
        duration: a.duration,
        markers,
    };
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()?;
    let summary = rt.block_on(async move {
        let running = server::start(opts).await?;
        println!("listening on ws://{}", running.local_addr());
        let stop = running.shutdown_handle();
        tokio::spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                stop.trigger();
            }
        });
        running.wait().await
    })?;
    println!(
        "{} steps, {:.3} s simulated, {} sessions",
        summary.steps, summary.time, summary.sessions
    );
    println!("trajectory hash {}", summary.trajectory_hash);
    Ok(ExitCode::SUCCESS)
}

fn replay_cmd(a: &ReplayArgs) -> anyhow::Result<ExitCode> {
    let file = File::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?;
    let mut states = Vec::new();
    let report = replay(BufReader::new(file), |s| {
        if a.out.is_some() {
            states.push(s.clone());
        }
    })?;
    if let Some(out) = &a.out {
        save_trajectory(out, &states)?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{} steps, {} states", report.steps, report.states);
        println!("replayed hash {}", report.replayed_hash);
        match &report.recorded_hash {
            Some(h) => println!(
                "recorded hash {h} ({})",
                if report.matches == Some(true) {
                    "match"
                } else {
                    "MISMATCH"
                }
            ),
            None => println!("recorded hash absent (session log has no end record)"),
        }
    }
    Ok(if report.matches == Some(false) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

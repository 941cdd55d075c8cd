//! Every `magbot` subcommand on the shipped example files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(path: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(path)
}

fn magbot(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_magbot"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "magbot {args:?} exited with {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn size_reports_every_check() {
    let params = data("params/default.yaml");
    let text = stdout(&magbot(&["size", "--params", path(&params)]));
    assert!(
        text.contains("adhesion") && text.contains("overall:"),
        "{text}"
    );
    let json = stdout(&magbot(&[
        "size",
        "--params",
        path(&params),
        "--structure",
        path(&data("structures/tube.yaml")),
        "--json",
    ]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let checks = v["feasibility"]["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 7);
    for c in checks.iter().filter(|c| c["case"] == "nominal") {
        assert_eq!(c["pass"], true, "{c}");
    }
    assert!(v["traversability"]["patches"].is_array());
}

#[test]
fn size_strict_fails_weak_magnets() {
    let out = Command::new(env!("CARGO_BIN_EXE_magbot"))
        .args([
            "size",
            "--strict",
            "--params",
            path(&data("params/weak_magnets.yaml")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "internal_corner",
        "external_corner",
        "spiral",
        "inspection_walk",
    ] {
        let out = dir.path().join(name);
        magbot(&[
            "simulate",
            "--scenario",
            path(&data(&format!("scenarios/{name}.yaml"))),
            "--out",
            path(&out),
        ]);
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap())
                .unwrap();
        assert!(summary["steps"].as_u64().unwrap() > 0);
        let rows = std::fs::read_to_string(out.join("trajectory.csv"))
            .unwrap()
            .lines()
            .count();
        assert_eq!(
            rows as u64,
            summary["steps"].as_u64().unwrap() + 2,
            "header plus initial state"
        );
        assert!(std::fs::read_to_string(out.join("events.jsonl"))
            .unwrap()
            .contains("\"completed\""));
    }
}

#[test]
fn inspect_rebuilds_the_shipped_map() {
    let dir = tempfile::tempdir().unwrap();
    let insp = data("inspection");
    let text = stdout(&magbot(&[
        "inspect",
        "--poses",
        path(&insp.join("poses.csv")),
        "--detections",
        path(&insp.join("detections.jsonl")),
        "--depth",
        path(&insp.join("depth/index.csv")),
        "--intrinsics",
        path(&insp.join("intrinsics.json")),
        "--config",
        path(&data("gateway.toml")),
        "--alignment",
        "identity",
        "--structure",
        path(&data("structures/internal_corner.yaml")),
        "--out",
        path(dir.path()),
    ]));
    assert!(text.starts_with("10 markers"), "{text}");
    let map: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("map.json")).unwrap())
            .unwrap();
    assert_eq!(map["markers"].as_array().unwrap().len(), 10);
    assert!(std::fs::read_to_string(dir.path().join("map.ply"))
        .unwrap()
        .starts_with("ply\n"));
}

#[test]
fn serve_runs_for_a_fixed_duration_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("session.jsonl");
    let text = stdout(&magbot(&[
        "serve",
        "--scenario",
        path(&data("scenarios/interactive.yaml")),
        "--config",
        path(&data("gateway.toml")),
        "--port",
        "0",
        "--realtime-factor",
        "20",
        "--duration",
        "2",
        "--log",
        path(&log),
    ]));
    assert!(text.contains("40 steps"), "{text}");
    let hash = text
        .lines()
        .find_map(|l| l.strip_prefix("trajectory hash "))
        .unwrap()
        .to_string();
    let replayed = stdout(&magbot(&["replay", "--log", path(&log)]));
    assert!(
        replayed.contains(&format!("replayed hash {hash}")),
        "{replayed}"
    );
}

#[test]
fn replay_of_shipped_session_matches() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("replay.csv");
    let out = magbot(&[
        "replay",
        "--log",
        path(&data("sessions/demo.jsonl")),
        "--out",
        path(&traj),
        "--json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["matches"], true);
    assert_eq!(
        std::fs::read_to_string(&traj).unwrap().lines().count(),
        v["states"].as_u64().unwrap() as usize + 1
    );
}

#[test]
fn tampered_session_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    let text = std::fs::read_to_string(data("sessions/demo.jsonl")).unwrap();
    std::fs::write(&log, text.replace("\"v_back\":0.08", "\"v_back\":0.09")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_magbot"))
        .args(["replay", "--log", path(&log)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let missing = Command::new(env!("CARGO_BIN_EXE_magbot"))
        .args(["simulate", "--scenario", "nope.yaml", "--out", "x"])
        .output();
    assert_eq!(missing.unwrap().status.code(), Some(2));
}

//! Regenerates the sample inspection logs under `data/inspection/` from the
//! synthetic floor-to-wall walkthrough.
//!
//! Usage: `cargo run -p magbot-core --example record_inspection [out_dir]`

use std::path::PathBuf;

use magbot_core::inspection::io::{save_depth_frames, save_detections, save_poses};
use magbot_core::inspection::synth::{walkthrough, RustSpot, WalkthroughConfig};
use magbot_core::inspection::StubConfig;
use magbot_core::scenario::{load_scenario, load_yaml, save_json};
use magbot_core::Exec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| data.join("inspection"));
    let scenario = load_scenario(&data.join("scenarios/inspection_walk.yaml"))?;
    let spots: Vec<RustSpot> = load_yaml(&data.join("inspection/spots.yaml"))?;
    let cfg = WalkthroughConfig::default();
    let walk = walkthrough(&scenario, &spots, &cfg, Exec::Parallel)?;
    let detections = walk.detections(&cfg.intrinsics, &StubConfig::default())?;
    // Only frames that produced detections are needed to rebuild the map.
    let frames: Vec<_> = walk
        .frames
        .iter()
        .filter(|f| detections.iter().any(|d| d.t == f.t))
        .map(|f| (f.t, &f.depth))
        .collect();
    save_poses(&out.join("poses.csv"), &walk.poses)?;
    save_detections(&out.join("detections.jsonl"), &detections)?;
    save_depth_frames(&out.join("depth/index.csv"), &frames)?;
    save_json(&out.join("intrinsics.json"), &cfg.intrinsics)?;
    save_json(&out.join("truth.json"), &walk.truth)?;
    println!(
        "{} poses, {} detections, {} depth frames -> {}",
        walk.poses.len(),
        detections.len(),
        frames.len(),
        out.display()
    );
    Ok(())
}

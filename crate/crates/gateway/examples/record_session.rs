//! Writes the shipped demo session log: a scripted teleoperation session on
//! the interactive corner scenario, recorded exactly as the service would.
//!
//! cargo run -p magbot-gateway --example record_session [out.jsonl]

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use magbot_core::scenario::load_scenario;
use magbot_core::simulator::Command;
use magbot_gateway::protocol::ControlVerb;
use magbot_gateway::world::World;

fn main() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| root.join("sessions/demo.jsonl"), PathBuf::from);
    let scenario = load_scenario(&root.join("scenarios/interactive.yaml"))?;
    let mut world = World::new(
        scenario,
        Some(Box::new(BufWriter::new(File::create(&out)?))),
    )?;
    let drive = |delta_front_deg: f64, v_back: f64| Command {
        delta_front: delta_front_deg.to_radians(),
        delta_back: 0.0,
        v_back,
        v_front: None,
    };
    // (steps to run first, seq, command): approach the wall, climb, veer.
    let script = [
        (10, 1, drive(0.0, 0.1)),
        (60, 2, drive(10.0, 0.1)),
        (40, 3, drive(-10.0, 0.08)),
    ];
    for (steps, seq, cmd) in script {
        for _ in 0..steps {
            world.tick()?;
        }
        world.set_command(seq, cmd)?;
    }
    for _ in 0..80 {
        world.tick()?;
    }
    world.control(ControlVerb::Pause)?;
    world.control(ControlVerb::Resume)?;
    for _ in 0..40 {
        world.tick()?;
    }
    world.finish()?;
    println!("{} steps, hash {}", world.steps(), world.trajectory_hash());
    Ok(())
}

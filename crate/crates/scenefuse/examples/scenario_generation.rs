//! Synthetic scenario generation: agents, map, annotations, and the text
//! file round trip.
//!
//! ```bash
//! cargo run --example scenario_generation
//! ```

use std::path::Path;

use scenefuse::simulator::{
    generate_scenario, load_scenario, mine_knowledge, save_scenario, GenSpec,
};

fn main() -> scenefuse::Result<()> {
    let spec = GenSpec { cars: 4, pedestrians: 2, ..GenSpec::default() };
    let scenario = generate_scenario(42, &spec)?;
    scenario.check_invariants()?;
    println!(
        "{}: {} agents over {} steps, ego behavior {}",
        scenario.id,
        scenario.agents.len(),
        scenario.duration,
        scenario.ego_behavior.name()
    );
    for (i, a) in scenario.agents.iter().enumerate() {
        let p = a.states[0].position;
        println!(
            "  agent {i}: {:10} lane {:?} {} at ({:+.1}, {:+.1})",
            a.class.name(),
            a.lane,
            a.behavior.name(),
            p[0],
            p[1]
        );
    }

    let frame = 4;
    let mined = mine_knowledge(&scenario, frame);
    println!(
        "frame {frame}: mined {} dynamic, {} signs, {} lights",
        mined.dynamic.len(),
        mined.signs.len(),
        mined.lights.len()
    );
    if let Some(ann) = scenario.annotations.iter().find(|a| a.frame == frame) {
        println!("annotation: {}", ann.text);
    }

    let dir = std::env::temp_dir().join("scenefuse_example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("scenario.txt");
    save_scenario(&path, &scenario)?;
    let reloaded = load_scenario(&path)?;
    assert_eq!(
        scenefuse::simulator::scenario_to_string(&scenario),
        scenefuse::simulator::scenario_to_string(&reloaded),
    );
    println!("round trip through {} is lossless", Path::new(&path).display());
    Ok(())
}

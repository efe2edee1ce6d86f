//! The corrected collision protocol against the legacy 0.5 m occupancy
//! grid: a 0.3 m obstacle the grid cannot see, and a turning ego whose
//! verdict flips when yaw estimation is disabled.
//!
//! ```bash
//! cargo run --example collision_protocols
//! ```

use scenefuse::geometry::OrientedBox2D;
use scenefuse::metrics::{collision_flags, legacy_grid_collision, PlanEvalConfig, WorldTimeline};

fn main() -> scenefuse::Result<()> {
    let cfg = PlanEvalConfig::default();

    // scene 1: a 0.3 m obstacle adjacent to a straight path, placed
    // between the 0.5 m grid cell centers
    let plan: Vec<[f64; 2]> = (1..=6).map(|k| [k as f64, 0.0]).collect();
    let small = WorldTimeline {
        static_obstacles: vec![OrientedBox2D::new([3.0, 0.5], [0.15, 0.15], 0.0)],
        dynamic: Vec::new(),
    };
    let corrected = collision_flags(&plan, ([0.0, 0.0], 0.0), &small, &cfg, true)?;
    let legacy = legacy_grid_collision(&plan, ([0.0, 0.0], 0.0), &small, &cfg, 0.5)?;
    println!("small-obstacle scene (0.3 m wide):");
    println!("  corrected protocol flags @1s/2s/3s: {corrected:?}");
    println!("  0.5 m grid flags        @1s/2s/3s: {legacy:?}   (quantization miss)");

    // scene 2: quarter-turn ego with a small box beside the final pose
    let turn: Vec<[f64; 2]> = (1..=6)
        .map(|k| {
            let a = k as f64 / 6.0 * std::f64::consts::FRAC_PI_2;
            [4.0 * a.sin(), 4.0 * (1.0 - a.cos())]
        })
        .collect();
    let last = turn[5];
    let beside = WorldTimeline {
        static_obstacles: vec![OrientedBox2D::new([last[0], last[1] + 1.5], [0.2, 0.2], 0.0)],
        dynamic: Vec::new(),
    };
    let with_yaw = collision_flags(&turn, ([0.0, 0.0], 0.0), &beside, &cfg, true)?;
    let without = collision_flags(&turn, ([0.0, 0.0], 0.0), &beside, &cfg, false)?;
    println!("rotating-ego scene:");
    println!("  with yaw estimation   : {with_yaw:?}");
    println!("  frozen initial heading: {without:?}   (orientation miss)");
    Ok(())
}

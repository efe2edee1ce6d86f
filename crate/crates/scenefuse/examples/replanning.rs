//! Closed-loop replanning with an obstacle appearing mid-stream; prints
//! the line-delimited decision log.
//!
//! ```bash
//! cargo run --example replanning
//! ```

use scenefuse::geometry::OrientedBox2D;
use scenefuse::planner::{replan_loop, AnchorPredictor, AnchorSet, UtilityWeights, WorldModel};

fn main() -> scenefuse::Result<()> {
    let anchors = AnchorSet {
        anchors: vec![
            (1..=4).map(|k| [k as f64 * 1.5, 0.0]).collect(),
            (1..=4).map(|k| [k as f64 * 0.1, 0.0]).collect(),
        ],
        labels: vec!["straight".into(), "yield".into()],
    };

    let open = WorldModel {
        drivable: vec![vec![[-60.0, -60.0], [60.0, -60.0], [60.0, 60.0], [-60.0, 60.0]]],
        static_obstacles: Vec::new(),
        dynamic: Vec::new(),
        route: (0..20).map(|k| [k as f64 * 3.0, 0.0]).collect(),
        ego_pose: ([0.0, 0.0], 0.0),
        ego_half_extents: [2.04, 0.92],
    };
    let mut stream = vec![open; 8];
    for snapshot in stream.iter_mut().skip(3) {
        snapshot.static_obstacles.push(OrientedBox2D::new([10.0, 0.0], [1.0, 1.0], 0.0));
    }

    let mut predictor = AnchorPredictor(&anchors);
    let log = replan_loop(&stream, &mut predictor, &UtilityWeights::default(), ([0.0, 0.0], 0.0))?;
    println!("decision log (an obstacle appears on the path at step 3):");
    for record in &log {
        println!("{}", record.to_line());
    }
    Ok(())
}

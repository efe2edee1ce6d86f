//! Anchor-based planning: cluster maneuver anchors from trajectories,
//! score similarity, mask infeasible candidates, and select by utility.
//!
//! ```bash
//! cargo run --example anchor_planning
//! ```

use scenefuse::geometry::OrientedBox2D;
use scenefuse::planner::{
    anchor_similarity, cluster_anchors, select, TrajectorySet, UtilityWeights, WorldModel,
};
use scenefuse::simulator::{generate_scenario, GenSpec};

fn main() -> scenefuse::Result<()> {
    // gather ego futures from a handful of scenarios and cluster them
    let spec = GenSpec::default();
    let mut futures = Vec::new();
    for seed in 0..12 {
        let s = generate_scenario(seed, &spec)?;
        for frame in 3..s.duration - 6 {
            if let Some(f) = s.ego_future(frame, 6) {
                futures.push(f);
            }
        }
    }
    let anchors = cluster_anchors(&futures, 6, 0)?;
    println!("clustered {} anchors from {} trajectories:", anchors.count(), futures.len());
    for (a, label) in anchors.anchors.iter().zip(&anchors.labels) {
        let last = a.last().unwrap();
        println!("  {label:10} ends at ({:+.1}, {:+.1})", last[0], last[1]);
    }

    let probe = &anchors.anchors[0];
    println!(
        "self-similarity {:.3}, similarity to next anchor {:.3}",
        anchor_similarity(probe, probe)?,
        anchor_similarity(probe, &anchors.anchors[1])?,
    );

    // a world with one parked obstacle ahead
    let world = WorldModel {
        drivable: vec![vec![[-50.0, -8.0], [50.0, -8.0], [50.0, 8.0], [-50.0, 8.0]]],
        static_obstacles: vec![OrientedBox2D::new([8.0, 0.0], [1.2, 1.0], 0.3)],
        dynamic: Vec::new(),
        route: (0..20).map(|k| [k as f64 * 3.0, 0.0]).collect(),
        ego_pose: ([0.0, 0.0], 0.0),
        ego_half_extents: [2.04, 0.92],
    };
    let mut candidates = TrajectorySet::new(anchors.anchors.clone(), vec![0.0; anchors.count()])?;
    let selection = select(&mut candidates, &world, &UtilityWeights::default())?;
    for m in 0..candidates.modes.len() {
        println!(
            "  mode {m} [{}]: feasible={} utility={:+.3}{}",
            anchors.labels[m],
            selection.feasible[m] as u8,
            selection.utilities[m],
            if m == selection.index { "  <- selected" } else { "" }
        );
    }
    println!("fallback used: {}", selection.fallback);
    Ok(())
}

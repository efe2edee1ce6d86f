//! Static BEV plots as SVG: map, agents, anchors, the selected plan and
//! the ground-truth trajectory.

use std::fmt::Write as _;

use crate::geometry::{to_world, OrientedBox2D};
use crate::simulator::{AgentClass, Scenario};

const SIZE: f64 = 640.0;
const SCALE: f64 = SIZE / 104.0; // world ±52 m into the viewport

fn sx(x: f64) -> f64 {
    SIZE / 2.0 + x * SCALE
}

fn sy(y: f64) -> f64 {
    SIZE / 2.0 - y * SCALE
}

fn polyline(points: &[[f64; 2]], style: &str) -> String {
    let pts = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
        .collect::<Vec<_>>()
        .join(" ");
    format!("<polyline points=\"{pts}\" fill=\"none\" {style}/>\n")
}

fn polygon(points: &[[f64; 2]], style: &str) -> String {
    let pts = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
        .collect::<Vec<_>>()
        .join(" ");
    format!("<polygon points=\"{pts}\" {style}/>\n")
}

fn box_polygon(b: &OrientedBox2D, style: &str) -> String {
    polygon(&b.corners(), style)
}

/// A bird's-eye snapshot of one scenario frame with the candidate anchors,
/// the selected plan and the ground-truth future (all ego-frame inputs are
/// drawn in world coordinates).
pub fn bev_svg(
    scenario: &Scenario,
    frame: usize,
    anchors: &[Vec<[f64; 2]>],
    selected_plan: &[[f64; 2]],
    gt_plan: &[[f64; 2]],
) -> String {
    let pose = scenario.ego_pose(frame);
    let mut svg = String::new();
    write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n",
        SIZE as i64
    )
    .unwrap();
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#f4f4f0\"/>\n");

    for poly in &scenario.map.drivable {
        svg.push_str(&polygon(poly, "fill=\"#d9d9d9\" stroke=\"#bbbbbb\" stroke-width=\"1\""));
    }
    for (_, lane) in &scenario.map.lanes {
        svg.push_str(&polyline(lane, "stroke=\"#ffffff\" stroke-width=\"1.5\" stroke-dasharray=\"6,5\""));
    }
    for s in &scenario.map.signs {
        write!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#cc8800\"/>\n", sx(s[0]), sy(s[1]))
            .unwrap();
    }
    for l in &scenario.map.lights {
        write!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#cc0044\"/>\n", sx(l[0]), sy(l[1]))
            .unwrap();
    }

    for track in &scenario.agents {
        let fp = track.box3d_at(frame).footprint();
        let style = match track.class {
            AgentClass::Pedestrian => "fill=\"#3355bb\" fill-opacity=\"0.8\"",
            AgentClass::Truck => "fill=\"#caa545\" fill-opacity=\"0.8\"",
            AgentClass::Car => "fill=\"#e0b63f\" fill-opacity=\"0.8\"",
        };
        svg.push_str(&box_polygon(&fp, style));
    }

    // candidate anchors, faint
    for anchor in anchors {
        let pts = to_world(anchor, pose);
        svg.push_str(&polyline(&pts, "stroke=\"#9999cc\" stroke-width=\"1\" stroke-opacity=\"0.7\""));
    }
    // ground truth then the selected plan on top
    let gt = to_world(gt_plan, pose);
    svg.push_str(&polyline(&gt, "stroke=\"#1155cc\" stroke-width=\"2.5\""));
    let plan = to_world(selected_plan, pose);
    svg.push_str(&polyline(&plan, "stroke=\"#cc2211\" stroke-width=\"2.5\""));

    // ego footprint last
    let ego = OrientedBox2D::new(pose.0, [2.04, 0.92], pose.1);
    svg.push_str(&box_polygon(&ego, "fill=\"#2e8b57\""));

    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_scenario, GenSpec};

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let s = generate_scenario(4, &GenSpec::default()).unwrap();
        let plan: Vec<[f64; 2]> = (1..=6).map(|k| [k as f64, 0.0]).collect();
        let a = bev_svg(&s, 3, &[plan.clone()], &plan, &plan);
        let b = bev_svg(&s, 3, &[plan.clone()], &plan, &plan);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
        assert!(a.contains("<polygon"));
    }
}

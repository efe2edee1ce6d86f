//! Synthetic world generation: agents with simple kinematics, an
//! intersection map, multi-view rendered feature and depth maps, rule-based
//! knowledge mining, deterministic textual annotations, and a hashed
//! bag-of-tokens text embedding standing in for an external encoder.
//!
//! Everything is pure given a seed; feature maps are synthetic splats so
//! sampling and depth tests have exact ground truth.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{require, Error, Result};
use crate::geometry::{normalize_angle, project, Box3D, Camera};
use crate::numeric::Tensor;

pub const STEP_PERIOD: f64 = 0.5; // 2 Hz
pub const BACKGROUND_DEPTH: f64 = 60.0;
const SPLAT_SIGMA: f64 = 3.0;
const SPLAT_RADIUS: f64 = 7.0;

// ── agents ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentClass {
    Car,
    Truck,
    Pedestrian,
}

impl AgentClass {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            AgentClass::Car => 0,
            AgentClass::Truck => 1,
            AgentClass::Pedestrian => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<AgentClass> {
        match i {
            0 => Ok(AgentClass::Car),
            1 => Ok(AgentClass::Truck),
            2 => Ok(AgentClass::Pedestrian),
            _ => Err(Error::contract(format!("unknown agent class {i}"))),
        }
    }

    /// Prior size (length, width, height) in meters.
    pub fn prior_size(self) -> [f64; 3] {
        match self {
            AgentClass::Car => [4.0, 1.8, 1.5],
            AgentClass::Truck => [8.0, 2.5, 3.0],
            AgentClass::Pedestrian => [0.6, 0.6, 1.7],
        }
    }

    /// Deterministic per-class feature signature over `c` channels. The
    /// amplitude keeps sampled features O(1) after the 1/depth falloff.
    pub fn signature(self, c: usize) -> Vec<f64> {
        let k = self.index();
        let mut sig = vec![0.0; c];
        sig[(2 * k) % c] += 16.0;
        sig[(2 * k + 1) % c] += 8.0;
        sig[c - 1] += 4.0;
        sig
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentClass::Car => "car",
            AgentClass::Truck => "truck",
            AgentClass::Pedestrian => "pedestrian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Straight,
    LeftTurn,
    RightTurn,
    Stop,
    Yield,
}

impl Behavior {
    pub fn name(self) -> &'static str {
        match self {
            Behavior::Straight => "straight",
            Behavior::LeftTurn => "left-turn",
            Behavior::RightTurn => "right-turn",
            Behavior::Stop => "stop",
            Behavior::Yield => "yield",
        }
    }

    pub fn from_name(s: &str) -> Result<Behavior> {
        match s {
            "straight" => Ok(Behavior::Straight),
            "left-turn" => Ok(Behavior::LeftTurn),
            "right-turn" => Ok(Behavior::RightTurn),
            "stop" => Ok(Behavior::Stop),
            "yield" => Ok(Behavior::Yield),
            _ => Err(Error::contract(format!("unknown behavior {s}"))),
        }
    }
}

/// Pose and speed of one participant at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: [f64; 3],
    pub yaw: f64,
    pub speed: f64,
}

#[derive(Debug, Clone)]
pub struct AgentTrack {
    pub class: AgentClass,
    /// Lane the agent drives on; pedestrians have none.
    pub lane: Option<usize>,
    pub behavior: Behavior,
    pub states: Vec<AgentState>,
}

impl AgentTrack {
    pub fn box3d_at(&self, frame: usize) -> Box3D {
        let s = &self.states[frame];
        Box3D {
            center: s.position,
            size: self.class.prior_size(),
            yaw: s.yaw,
            class: self.class.index(),
            score: 1.0,
        }
    }
}

// ── map ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Default)]
pub struct MapData {
    pub drivable: Vec<Vec<[f64; 2]>>,
    /// (lane id, centerline polyline)
    pub lanes: Vec<(usize, Vec<[f64; 2]>)>,
    pub signs: Vec<[f64; 2]>,
    pub lights: Vec<[f64; 2]>,
}

// ── rig ──────────────────────────────────────────────────────────────────

/// Synchronized multi-view camera rig mounted on the ego vehicle.
#[derive(Debug, Clone)]
pub struct RigConfig {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub mount_height: f64,
}

impl RigConfig {
    /// Three forward cameras: front, front-left, front-right.
    pub fn desk(channels: usize) -> RigConfig {
        RigConfig {
            views: 3,
            width: 32,
            height: 32,
            channels,
            fx: 16.0,
            fy: 16.0,
            cx: 16.0,
            cy: 16.0,
            mount_height: 1.6,
        }
    }

    /// Full surround rig.
    pub fn surround(channels: usize) -> RigConfig {
        RigConfig { views: 6, ..RigConfig::desk(channels) }
    }

    pub fn view_yaw_offsets(&self) -> Vec<f64> {
        let third = 55.0_f64.to_radians();
        let rear = 125.0_f64.to_radians();
        match self.views {
            1 => vec![0.0],
            2 => vec![-third, third],
            3 => vec![0.0, third, -third],
            6 => vec![0.0, third, -third, std::f64::consts::PI, rear, -rear],
            n => (0..n).map(|i| i as f64 * 2.0 * std::f64::consts::PI / n as f64).collect(),
        }
    }

    pub fn cameras(&self, ego_position: [f64; 2], ego_yaw: f64) -> Vec<Camera> {
        self.view_yaw_offsets()
            .iter()
            .map(|&off| {
                Camera::looking(
                    [ego_position[0], ego_position[1], self.mount_height],
                    normalize_angle(ego_yaw + off),
                    self.fx,
                    self.fy,
                    self.cx,
                    self.cy,
                    self.width,
                    self.height,
                )
            })
            .collect()
    }
}

// ── scenario ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Annotation {
    pub frame: usize,
    pub prompt: String,
    pub text: String,
    pub selected: Vec<usize>,
    /// Agent id → views the agent is visible in.
    pub provenance: Vec<(usize, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub duration: usize,
    pub ego_behavior: Behavior,
    pub ego: Vec<AgentState>,
    pub route: Vec<[f64; 2]>,
    pub agents: Vec<AgentTrack>,
    pub map: MapData,
    pub rig: RigConfig,
    pub annotations: Vec<Annotation>,
}

impl Scenario {
    pub fn ego_pose(&self, frame: usize) -> ([f64; 2], f64) {
        let s = &self.ego[frame];
        ([s.position[0], s.position[1]], s.yaw)
    }

    /// Ego speed and yaw rate at `frame`.
    pub fn ego_status(&self, frame: usize) -> (f64, f64) {
        let s = &self.ego[frame];
        let yaw_rate = if frame + 1 < self.duration {
            normalize_angle(self.ego[frame + 1].yaw - s.yaw) / STEP_PERIOD
        } else if frame > 0 {
            normalize_angle(s.yaw - self.ego[frame - 1].yaw) / STEP_PERIOD
        } else {
            0.0
        };
        (s.speed, yaw_rate)
    }

    /// Future positions of an agent, in that agent's frame at `frame`.
    pub fn agent_future(
        &self,
        agent: usize,
        frame: usize,
        horizon: usize,
    ) -> Option<Vec<[f64; 2]>> {
        let track = &self.agents[agent];
        if frame + horizon >= self.duration {
            return None;
        }
        let s = &track.states[frame];
        let pose = ([s.position[0], s.position[1]], s.yaw);
        let pts: Vec<[f64; 2]> = (1..=horizon)
            .map(|k| {
                let p = track.states[frame + k].position;
                [p[0], p[1]]
            })
            .collect();
        Some(crate::geometry::to_subject(&pts, pose))
    }

    /// Future ego positions in the ego frame at `frame`.
    pub fn ego_future(&self, frame: usize, horizon: usize) -> Option<Vec<[f64; 2]>> {
        if frame + horizon >= self.duration {
            return None;
        }
        let pose = self.ego_pose(frame);
        let pts: Vec<[f64; 2]> = (1..=horizon)
            .map(|k| [self.ego[frame + k].position[0], self.ego[frame + k].position[1]])
            .collect();
        Some(crate::geometry::to_subject(&pts, pose))
    }

    /// Continuity (≤ 5 m per step) and scene-volume bounds for all agents.
    pub fn check_invariants(&self) -> Result<()> {
        let all_tracks = self.agents.iter().map(|a| &a.states).chain(std::iter::once(&self.ego));
        for states in all_tracks {
            require(states.len() == self.duration, "track length must equal duration")?;
            for w in states.windows(2) {
                let d = ((w[1].position[0] - w[0].position[0]).powi(2)
                    + (w[1].position[1] - w[0].position[1]).powi(2))
                .sqrt();
                require(d <= 5.0, format!("per-step displacement {d:.2} m exceeds 5 m"))?;
            }
            for s in states {
                require(
                    s.position[0].abs() <= 50.0
                        && s.position[1].abs() <= 50.0
                        && s.position[2].abs() <= 6.0,
                    "agent left the scene volume",
                )?;
            }
        }
        Ok(())
    }
}

/// Generation request: agent counts and world size.
#[derive(Debug, Clone)]
pub struct GenSpec {
    pub cars: usize,
    pub pedestrians: usize,
    pub duration: usize,
    pub rig: RigConfig,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec { cars: 3, pedestrians: 1, duration: 12, rig: RigConfig::desk(8) }
    }
}

const LANE_HEADINGS: [f64; 4] =
    [0.0, std::f64::consts::PI, std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2];

fn lane_point(lane: usize, lon: f64) -> [f64; 2] {
    match lane {
        0 => [lon, -3.0],  // eastbound
        1 => [-lon, 3.0],  // westbound
        2 => [3.0, lon],   // northbound
        _ => [-3.0, -lon], // southbound
    }
}

fn intersection_map() -> MapData {
    let road_x = vec![[-50.0, -6.0], [50.0, -6.0], [50.0, 6.0], [-50.0, 6.0]];
    let road_y = vec![[-6.0, -50.0], [6.0, -50.0], [6.0, 50.0], [-6.0, 50.0]];
    let lanes = (0..4)
        .map(|l| {
            let pts: Vec<[f64; 2]> =
                (0..=20).map(|k| lane_point(l, -48.0 + 4.8 * k as f64)).collect();
            (l, pts)
        })
        .collect();
    MapData { drivable: vec![road_x, road_y], lanes, signs: Vec::new(), lights: Vec::new() }
}

/// Rolls one participant forward with behavior-dependent kinematics.
fn roll_track(
    start: AgentState,
    behavior: Behavior,
    duration: usize,
    is_pedestrian: bool,
) -> Vec<AgentState> {
    let mut states = vec![start];
    let mut turned = 0.0_f64;
    for _ in 1..duration {
        let cur = *states.last().unwrap();
        let mut speed = cur.speed;
        let mut yaw_rate = 0.0;
        match behavior {
            Behavior::Straight => {}
            Behavior::LeftTurn | Behavior::RightTurn => {
                // begin turning near the junction, stop after a quarter turn
                let near = cur.position[0].abs() < 8.0 && cur.position[1].abs() < 8.0;
                if near && turned.abs() < std::f64::consts::FRAC_PI_2 {
                    yaw_rate = if behavior == Behavior::LeftTurn { 0.45 } else { -0.45 };
                }
            }
            Behavior::Stop => speed = (speed - 2.0 * STEP_PERIOD).max(0.0),
            Behavior::Yield => speed = (speed - 1.5 * STEP_PERIOD).max(1.0),
        }
        if is_pedestrian {
            yaw_rate = 0.0;
        }
        let yaw = normalize_angle(cur.yaw + yaw_rate * STEP_PERIOD);
        turned += yaw_rate * STEP_PERIOD;
        let mut x = cur.position[0] + speed * STEP_PERIOD * yaw.cos();
        let mut y = cur.position[1] + speed * STEP_PERIOD * yaw.sin();
        // participants halt at the scene boundary
        if x.abs() > 48.0 || y.abs() > 48.0 {
            x = cur.position[0];
            y = cur.position[1];
            speed = 0.0;
        }
        states.push(AgentState { position: [x, y, cur.position[2]], yaw, speed });
    }
    states
}

/// Deterministic synthetic scenario for a seed.
pub fn generate_scenario(seed: u64, spec: &GenSpec) -> Result<Scenario> {
    require(spec.duration >= 2, "scenario needs at least 2 steps")?;
    let mut rng = crate::rng(seed);
    let mut map = intersection_map();
    map.signs.push([-12.0 + rng.gen_range(-2.0..2.0), -7.5]);
    map.signs.push([12.0 + rng.gen_range(-2.0..2.0), 7.5]);
    map.lights.push([-7.0, -7.5]);
    map.lights.push([7.0, 7.5]);

    // ego: eastbound lane, short of the junction
    let ego_behaviors = [
        Behavior::Straight,
        Behavior::Stop,
        Behavior::Yield,
        Behavior::LeftTurn,
        Behavior::RightTurn,
    ];
    let ego_behavior = ego_behaviors[rng.gen_range(0..ego_behaviors.len())];
    let ego_x = rng.gen_range(-24.0..-14.0);
    let ego_speed = rng.gen_range(3.5..6.5);
    let ego_start = AgentState { position: [ego_x, -3.0, 0.0], yaw: 0.0, speed: ego_speed };
    let ego = roll_track(ego_start, ego_behavior, spec.duration, false);
    let route: Vec<[f64; 2]> = roll_track(ego_start, ego_behavior, spec.duration.max(24), false)
        .iter()
        .map(|s| [s.position[0], s.position[1]])
        .collect();

    let mut agents = Vec::new();
    for i in 0..spec.cars {
        let class = if rng.gen_bool(0.25) { AgentClass::Truck } else { AgentClass::Car };
        // first car leads the ego in its lane, the rest spread over lanes
        let lane = if i == 0 { 0 } else { rng.gen_range(0..4) };
        let lon = if i == 0 {
            ego_x + rng.gen_range(10.0..18.0)
        } else {
            match lane {
                0 | 1 => rng.gen_range(-30.0..-8.0),
                _ => rng.gen_range(-26.0..-10.0),
            }
        };
        let p = lane_point(lane, lon);
        let behaviors = [
            Behavior::Straight,
            Behavior::Stop,
            Behavior::Yield,
            Behavior::LeftTurn,
            Behavior::RightTurn,
        ];
        let behavior = behaviors[rng.gen_range(0..behaviors.len())];
        let speed = rng.gen_range(2.5..7.0);
        let h = class.prior_size()[2];
        let start = AgentState { position: [p[0], p[1], h / 2.0], yaw: LANE_HEADINGS[lane], speed };
        let states = roll_track(start, behavior, spec.duration, false);
        agents.push(AgentTrack { class, lane: Some(lane), behavior, states });
    }
    for _ in 0..spec.pedestrians {
        let side = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
        let x = rng.gen_range(-12.0..12.0);
        let start = AgentState {
            position: [x, side * 8.0, 1.7 / 2.0],
            yaw: if side < 0.0 {
                std::f64::consts::FRAC_PI_2
            } else {
                -std::f64::consts::FRAC_PI_2
            },
            speed: 1.2,
        };
        let states = roll_track(start, Behavior::Straight, spec.duration, true);
        agents.push(AgentTrack {
            class: AgentClass::Pedestrian,
            lane: None,
            behavior: Behavior::Straight,
            states,
        });
    }

    let mut scenario = Scenario {
        id: format!("scn_{seed:05}"),
        seed,
        duration: spec.duration,
        ego_behavior,
        ego,
        route,
        agents,
        map,
        rig: spec.rig.clone(),
        annotations: Vec::new(),
    };
    let history = 3;
    for frame in (history - 1)..scenario.duration {
        let ann = annotate(&scenario, frame, "describe the scene")?;
        scenario.annotations.push(ann);
    }
    scenario.check_invariants()?;
    Ok(scenario)
}

// ── rendering ────────────────────────────────────────────────────────────

/// Feature and depth maps for every view at `frame`. Each agent splats its
/// class signature at the projected center scaled by 1/depth; depth maps
/// hold true camera-frame depth on agent pixels and a far constant
/// elsewhere.
pub fn render_views(
    scenario: &Scenario,
    frame: usize,
    rig: &RigConfig,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    require(frame < scenario.duration, format!("frame {frame} out of range"))?;
    let (pos, yaw) = scenario.ego_pose(frame);
    let cams = rig.cameras(pos, yaw);
    let (c, h, w) = (rig.channels, rig.height, rig.width);
    let mut features = Vec::with_capacity(cams.len());
    let mut depths = Vec::with_capacity(cams.len());
    for cam in &cams {
        let mut feat = vec![0.0; c * h * w];
        let mut depth = vec![BACKGROUND_DEPTH; h * w];
        for track in &scenario.agents {
            let p = track.states[frame].position;
            let pr = project(cam, p);
            if !pr.visible {
                continue;
            }
            let sig = track.class.signature(c);
            let (u0, v0) = (pr.u, pr.v);
            let lo_x = (u0 - SPLAT_RADIUS).floor().max(0.0) as usize;
            let hi_x = (u0 + SPLAT_RADIUS).ceil().min((w - 1) as f64) as usize;
            let lo_y = (v0 - SPLAT_RADIUS).floor().max(0.0) as usize;
            let hi_y = (v0 + SPLAT_RADIUS).ceil().min((h - 1) as f64) as usize;
            for py in lo_y..=hi_y {
                for px in lo_x..=hi_x {
                    let d2 = (px as f64 - u0).powi(2) + (py as f64 - v0).powi(2);
                    if d2 > SPLAT_RADIUS * SPLAT_RADIUS {
                        continue;
                    }
                    let wgt = (-d2 / (2.0 * SPLAT_SIGMA * SPLAT_SIGMA)).exp() / pr.depth;
                    for (ch, &s) in sig.iter().enumerate() {
                        feat[ch * h * w + py * w + px] += s * wgt;
                    }
                    let cell = &mut depth[py * w + px];
                    *cell = cell.min(pr.depth);
                }
            }
        }
        features.push(Tensor::new(vec![c, h, w], feat)?);
        depths.push(Tensor::new(vec![h, w], depth)?);
    }
    Ok((features, depths))
}

// ── knowledge mining ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MinedObjects {
    pub dynamic: Vec<usize>,
    pub signs: Vec<usize>,
    pub lights: Vec<usize>,
}

/// The single place that interprets a "within L meters in an R-meter
/// radius" rule: longitudinal bound and lateral radius bound, conjoined.
fn within_rule(lon: f64, lat: f64, lon_min: f64, lon_max: f64, lat_radius: f64) -> bool {
    lon >= lon_min && lon <= lon_max && lat.abs() <= lat_radius
}

/// Ego-relative longitudinal/lateral offsets of a world point.
fn ego_relative(pose: ([f64; 2], f64), p: [f64; 2]) -> (f64, f64) {
    let s = crate::geometry::to_subject(&[p], pose);
    (s[0][0], s[0][1])
}

/// Rule-based object selection around the ego vehicle:
/// - dynamic obstacles within 15 m longitudinally in a 20 m radius, ahead
///   and behind;
/// - dynamic obstacles within 30 m ahead in a 50 m radius and 30 m behind
///   in a 30 m radius, with the closest target per lane always included;
/// - traffic signs within 30 m ahead in a 30 m radius;
/// - traffic lights within 30 m ahead in a 50 m radius.
pub fn mine_knowledge(scenario: &Scenario, frame: usize) -> MinedObjects {
    let pose = scenario.ego_pose(frame);
    let mut out = MinedObjects::default();

    let mut closest_per_lane: Vec<Option<(usize, f64)>> = vec![None; 4];
    for (i, track) in scenario.agents.iter().enumerate() {
        let p = track.states[frame].position;
        let (lon, lat) = ego_relative(pose, [p[0], p[1]]);
        let range = (lon * lon + lat * lat).sqrt();
        let near = within_rule(lon, lat, -15.0, 15.0, 20.0);
        let broad =
            within_rule(lon, lat, 0.0, 30.0, 50.0) || within_rule(lon, lat, -30.0, 0.0, 30.0);
        if near || broad {
            out.dynamic.push(i);
        }
        if let Some(lane) = track.lane {
            if lon.abs() <= 30.0 {
                let better = match closest_per_lane[lane] {
                    Some((_, best)) => range < best,
                    None => true,
                };
                if better {
                    closest_per_lane[lane] = Some((i, range));
                }
            }
        }
    }
    for entry in closest_per_lane.into_iter().flatten() {
        if !out.dynamic.contains(&entry.0) {
            out.dynamic.push(entry.0);
        }
    }
    out.dynamic.sort_unstable();

    for (i, &p) in scenario.map.signs.iter().enumerate() {
        let (lon, lat) = ego_relative(pose, p);
        if within_rule(lon, lat, 0.0, 30.0, 30.0) {
            out.signs.push(i);
        }
    }
    for (i, &p) in scenario.map.lights.iter().enumerate() {
        let (lon, lat) = ego_relative(pose, p);
        if within_rule(lon, lat, 0.0, 30.0, 50.0) {
            out.lights.push(i);
        }
    }
    out
}

// ── annotation ───────────────────────────────────────────────────────────

fn bearing_bucket(lon: f64, lat: f64) -> &'static str {
    let angle = lat.atan2(lon).to_degrees();
    match angle {
        a if (-22.5..22.5).contains(&a) => "ahead",
        a if (22.5..67.5).contains(&a) => "ahead-left",
        a if (67.5..112.5).contains(&a) => "left",
        a if (112.5..157.5).contains(&a) => "behind-left",
        a if (-67.5..-22.5).contains(&a) => "ahead-right",
        a if (-112.5..-67.5).contains(&a) => "right",
        a if (-157.5..-112.5).contains(&a) => "behind-right",
        _ => "behind",
    }
}

/// Interface for the text source; the built-in implementation is a
/// deterministic template, an external language-model client can be
/// plugged in instead.
pub trait SceneDescriber {
    fn describe(&self, scenario: &Scenario, frame: usize, prompt: &str) -> Result<String>;
}

/// Deterministic template describer over mined objects.
pub struct TemplateDescriber;

impl SceneDescriber for TemplateDescriber {
    fn describe(&self, scenario: &Scenario, frame: usize, prompt: &str) -> Result<String> {
        let mined = mine_knowledge(scenario, frame);
        let pose = scenario.ego_pose(frame);
        let hazard_mode = prompt.contains("attention");
        if mined.dynamic.is_empty() && mined.signs.is_empty() && mined.lights.is_empty() {
            return Ok(if hazard_mode {
                "attention: clear scene, no hazards".to_string()
            } else {
                "clear scene ahead".to_string()
            });
        }
        let mut parts = Vec::new();
        let mut vehicles = 0usize;
        let mut pedestrians = 0usize;
        for &i in &mined.dynamic {
            let track = &scenario.agents[i];
            if track.class == AgentClass::Pedestrian {
                pedestrians += 1;
            } else {
                vehicles += 1;
            }
            let p = track.states[frame].position;
            let (lon, lat) = ego_relative(pose, [p[0], p[1]]);
            let dist = (lon * lon + lat * lat).sqrt().round() as i64;
            parts.push(format!(
                "{} {} m {} {}",
                track.class.name(),
                dist,
                bearing_bucket(lon, lat),
                track.behavior.name()
            ));
        }
        let head = if hazard_mode {
            "attention:".to_string()
        } else {
            format!("scene with {vehicles} vehicles and {pedestrians} pedestrians;")
        };
        let tail = format!(" signs {} lights {}", mined.signs.len(), mined.lights.len());
        Ok(format!("{} {}{}", head, parts.join("; "), tail))
    }
}

/// Deterministic annotation for a frame: template text over mined objects
/// plus per-view visibility provenance.
pub fn annotate(scenario: &Scenario, frame: usize, prompt: &str) -> Result<Annotation> {
    annotate_with(&TemplateDescriber, scenario, frame, prompt)
}

pub fn annotate_with(
    describer: &dyn SceneDescriber,
    scenario: &Scenario,
    frame: usize,
    prompt: &str,
) -> Result<Annotation> {
    let history = 3usize;
    require(
        frame + 1 >= history,
        format!("annotate needs at least {history} history frames, got frame {frame}"),
    )?;
    require(frame < scenario.duration, "frame out of range")?;
    let mined = mine_knowledge(scenario, frame);
    let text = describer.describe(scenario, frame, prompt)?;
    let (pos, yaw) = scenario.ego_pose(frame);
    let cams = scenario.rig.cameras(pos, yaw);
    let provenance = mined
        .dynamic
        .iter()
        .map(|&i| {
            let p = scenario.agents[i].states[frame].position;
            let views = cams
                .iter()
                .enumerate()
                .filter(|(_, cam)| project(cam, p).visible)
                .map(|(v, _)| v)
                .collect();
            (i, views)
        })
        .collect();
    Ok(Annotation { frame, prompt: prompt.to_string(), text, selected: mined.dynamic, provenance })
}

// ── text embedding ───────────────────────────────────────────────────────

fn fnv1a(token: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in token.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic hashed bag-of-tokens embedding, L2 normalized. Identical
/// texts produce identical vectors; token order does not matter.
pub fn embed_text(text: &str, d_t: usize) -> Result<Tensor> {
    require(d_t >= 1, "embedding width must be at least 1")?;
    let mut v = vec![0.0; d_t];
    for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let h = fnv1a(&token.to_lowercase());
        let idx = (h % d_t as u64) as usize;
        let sign = if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    Tensor::new(vec![d_t], v)
}

// ── scenario files ───────────────────────────────────────────────────────

fn fmt_pts(pts: &[[f64; 2]]) -> String {
    pts.iter().map(|p| format!("{} {}", p[0], p[1])).collect::<Vec<_>>().join(" ")
}

fn parse_pts(s: &str) -> Result<Vec<[f64; 2]>> {
    let nums: Vec<f64> = s
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::contract(format!("bad number {t}"))))
        .collect::<Result<_>>()?;
    if nums.len() % 2 != 0 {
        return Err(Error::contract("odd coordinate count in polyline"));
    }
    Ok(nums.chunks(2).map(|c| [c[0], c[1]]).collect())
}

/// Self-describing text serialization; round-trips losslessly (floats are
/// written with shortest-round-trip formatting).
pub fn scenario_to_string(s: &Scenario) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "# scenefuse scenario v1").unwrap();
    writeln!(w, "[meta]").unwrap();
    writeln!(w, "id = {}", s.id).unwrap();
    writeln!(w, "seed = {}", s.seed).unwrap();
    writeln!(w, "duration = {}", s.duration).unwrap();
    writeln!(w, "ego_behavior = {}", s.ego_behavior.name()).unwrap();
    writeln!(
        w,
        "rig = {} {} {} {} {} {} {} {} {}",
        s.rig.views,
        s.rig.width,
        s.rig.height,
        s.rig.channels,
        s.rig.fx,
        s.rig.fy,
        s.rig.cx,
        s.rig.cy,
        s.rig.mount_height
    )
    .unwrap();
    writeln!(w, "\n[map]").unwrap();
    for poly in &s.map.drivable {
        writeln!(w, "drivable = {}", fmt_pts(poly)).unwrap();
    }
    for (id, pts) in &s.map.lanes {
        writeln!(w, "lane = {} {}", id, fmt_pts(pts)).unwrap();
    }
    for p in &s.map.signs {
        writeln!(w, "sign = {} {}", p[0], p[1]).unwrap();
    }
    for p in &s.map.lights {
        writeln!(w, "light = {} {}", p[0], p[1]).unwrap();
    }
    writeln!(w, "\n[ego]").unwrap();
    writeln!(w, "route = {}", fmt_pts(&s.route)).unwrap();
    for st in &s.ego {
        writeln!(
            w,
            "state = {} {} {} {} {}",
            st.position[0], st.position[1], st.position[2], st.yaw, st.speed
        )
        .unwrap();
    }
    writeln!(w, "\n[agents]").unwrap();
    for (i, a) in s.agents.iter().enumerate() {
        let lane = a.lane.map(|l| l as i64).unwrap_or(-1);
        writeln!(w, "agent = {} {} {} {}", i, a.class.index(), lane, a.behavior.name()).unwrap();
        for st in &a.states {
            writeln!(
                w,
                "state = {} {} {} {} {} {}",
                i, st.position[0], st.position[1], st.position[2], st.yaw, st.speed
            )
            .unwrap();
        }
    }
    writeln!(w, "\n[annotations]").unwrap();
    for ann in &s.annotations {
        writeln!(w, "ann = {}|{}|{}", ann.frame, ann.prompt, ann.text).unwrap();
        let ids = ann.selected.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        writeln!(w, "sel = {} {}", ann.frame, ids).unwrap();
        for (id, views) in &ann.provenance {
            let vs = views.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            writeln!(w, "prov = {} {} {}", ann.frame, id, vs).unwrap();
        }
    }
    out
}

pub fn save_scenario(path: &Path, s: &Scenario) -> Result<()> {
    std::fs::write(path, scenario_to_string(s)).map_err(|e| Error::io(path, e))
}

pub fn scenario_from_string(text: &str, origin: &Path) -> Result<Scenario> {
    let perr = |m: String| Error::Parse { path: origin.to_path_buf(), message: m };
    let mut section = String::new();
    let mut id = String::new();
    let mut seed = 0u64;
    let mut duration = 0usize;
    let mut ego_behavior = Behavior::Straight;
    let mut rig = RigConfig::desk(8);
    let mut map = MapData::default();
    let mut route = Vec::new();
    let mut ego = Vec::new();
    let mut agents: Vec<AgentTrack> = Vec::new();
    let mut annotations: Vec<Annotation> = Vec::new();

    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| perr(format!("expected key = value, got {line}")))?;
        match (section.as_str(), key) {
            ("meta", "id") => id = value.to_string(),
            ("meta", "seed") => seed = value.parse().map_err(|_| perr("bad seed".into()))?,
            ("meta", "duration") => {
                duration = value.parse().map_err(|_| perr("bad duration".into()))?
            }
            ("meta", "ego_behavior") => ego_behavior = Behavior::from_name(value)?,
            ("meta", "rig") => {
                let f: Vec<&str> = value.split_whitespace().collect();
                if f.len() != 9 {
                    return Err(perr("rig needs 9 fields".into()));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| perr("bad rig".into()));
                let int = |s: &str| s.parse::<usize>().map_err(|_| perr("bad rig".into()));
                rig = RigConfig {
                    views: int(f[0])?,
                    width: int(f[1])?,
                    height: int(f[2])?,
                    channels: int(f[3])?,
                    fx: num(f[4])?,
                    fy: num(f[5])?,
                    cx: num(f[6])?,
                    cy: num(f[7])?,
                    mount_height: num(f[8])?,
                };
            }
            ("map", "drivable") => map.drivable.push(parse_pts(value)?),
            ("map", "lane") => {
                let (idx, rest) = value.split_once(' ').ok_or_else(|| perr("bad lane".into()))?;
                let lane_id = idx.parse().map_err(|_| perr("bad lane id".into()))?;
                map.lanes.push((lane_id, parse_pts(rest)?));
            }
            ("map", "sign") => {
                let p = parse_pts(value)?;
                map.signs.push(p[0]);
            }
            ("map", "light") => {
                let p = parse_pts(value)?;
                map.lights.push(p[0]);
            }
            ("ego", "route") => route = parse_pts(value)?,
            ("ego", "state") => {
                let f: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| perr("bad ego state".into())))
                    .collect::<Result<_>>()?;
                if f.len() != 5 {
                    return Err(perr("ego state needs 5 fields".into()));
                }
                ego.push(AgentState { position: [f[0], f[1], f[2]], yaw: f[3], speed: f[4] });
            }
            ("agents", "agent") => {
                let f: Vec<&str> = value.split_whitespace().collect();
                if f.len() != 4 {
                    return Err(perr("agent needs 4 fields".into()));
                }
                let class =
                    AgentClass::from_index(f[1].parse().map_err(|_| perr("bad class".into()))?)?;
                let lane: i64 = f[2].parse().map_err(|_| perr("bad lane".into()))?;
                agents.push(AgentTrack {
                    class,
                    lane: if lane < 0 { None } else { Some(lane as usize) },
                    behavior: Behavior::from_name(f[3])?,
                    states: Vec::new(),
                });
            }
            ("agents", "state") => {
                let f: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| perr("bad agent state".into())))
                    .collect::<Result<_>>()?;
                if f.len() != 6 {
                    return Err(perr("agent state needs 6 fields".into()));
                }
                let idx = f[0] as usize;
                if idx >= agents.len() {
                    return Err(perr("agent state before agent declaration".into()));
                }
                agents[idx]
                    .states
                    .push(AgentState { position: [f[1], f[2], f[3]], yaw: f[4], speed: f[5] });
            }
            ("annotations", "ann") => {
                let mut parts = value.splitn(3, '|');
                let frame: usize = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| perr("bad annotation frame".into()))?;
                let prompt = parts.next().unwrap_or_default().to_string();
                let text = parts.next().unwrap_or_default().to_string();
                annotations.push(Annotation {
                    frame,
                    prompt,
                    text,
                    selected: Vec::new(),
                    provenance: Vec::new(),
                });
            }
            ("annotations", "sel") => {
                let (fs, ids) = value.split_once(' ').unwrap_or((value, ""));
                let frame: usize = fs.parse().map_err(|_| perr("bad sel frame".into()))?;
                let ann = annotations
                    .iter_mut()
                    .find(|a| a.frame == frame)
                    .ok_or_else(|| perr("sel before ann".into()))?;
                ann.selected = ids
                    .split(',')
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse().map_err(|_| perr("bad sel id".into())))
                    .collect::<Result<_>>()?;
            }
            ("annotations", "prov") => {
                let f: Vec<&str> = value.split_whitespace().collect();
                if f.len() < 2 {
                    return Err(perr("bad prov".into()));
                }
                let frame: usize = f[0].parse().map_err(|_| perr("bad prov frame".into()))?;
                let obj: usize = f[1].parse().map_err(|_| perr("bad prov id".into()))?;
                let views = if f.len() > 2 {
                    f[2].split(',')
                        .filter(|t| !t.is_empty())
                        .map(|t| t.parse().map_err(|_| perr("bad prov view".into())))
                        .collect::<Result<_>>()?
                } else {
                    Vec::new()
                };
                let ann = annotations
                    .iter_mut()
                    .find(|a| a.frame == frame)
                    .ok_or_else(|| perr("prov before ann".into()))?;
                ann.provenance.push((obj, views));
            }
            _ => return Err(perr(format!("unknown key {key} in section [{section}]"))),
        }
    }
    Ok(Scenario { id, seed, duration, ego_behavior, ego, route, agents, map, rig, annotations })
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scenario_from_string(&text, path)
}

//! Anchor-based multimodal planning: k-means trajectory anchors,
//! similarity scoring, feasibility masking against map and obstacles,
//! composite utility scoring, hierarchical mode selection, a tracked
//! instance queue, and closed-loop replanning.
//!
//! Candidate trajectories live in the subject (ego) frame; the world model
//! carries world-frame geometry plus the current ego pose.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{require, Result};
use crate::geometry::{
    box_inside_polygons, boxes_intersect, normalize_angle, obb_clearance, to_world,
    yaw_from_trajectory, OrientedBox2D,
};
use crate::numeric::Tensor;

// ── anchors ──────────────────────────────────────────────────────────────

/// Prototypical future trajectories obtained by clustering.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    pub anchors: Vec<Vec<[f64; 2]>>,
    pub labels: Vec<String>,
}

impl AnchorSet {
    pub fn horizon(&self) -> usize {
        self.anchors.first().map(|a| a.len()).unwrap_or(0)
    }

    pub fn count(&self) -> usize {
        self.anchors.len()
    }

    /// Anchors flattened to a `(K × 2T)` tensor.
    pub fn as_tensor(&self) -> Result<Tensor> {
        let k = self.count();
        let t2 = self.horizon() * 2;
        let flat: Vec<f64> =
            self.anchors.iter().flat_map(|a| a.iter().flatten().copied()).collect();
        Tensor::new(vec![k, t2], flat)
    }

    pub fn from_tensor(t: &Tensor) -> Result<AnchorSet> {
        require(t.rank() == 2 && t.shape()[1] % 2 == 0, "anchor tensor must be (K × 2T)")?;
        let anchors: Vec<Vec<[f64; 2]>> = (0..t.shape()[0])
            .map(|i| t.row(i).chunks(2).map(|c| [c[0], c[1]]).collect())
            .collect();
        let labels = anchors.iter().map(|a| maneuver_label(a).to_string()).collect();
        Ok(AnchorSet { anchors, labels })
    }
}

/// Descriptive maneuver name for a trajectory in the subject frame.
pub fn maneuver_label(traj: &[[f64; 2]]) -> &'static str {
    if traj.is_empty() {
        return "stop";
    }
    let last = traj[traj.len() - 1];
    let total = (last[0] * last[0] + last[1] * last[1]).sqrt();
    if total < 1.0 {
        return "stop";
    }
    let heading = last[1].atan2(last[0]);
    if heading > 0.35 {
        "left-turn"
    } else if heading < -0.35 {
        "right-turn"
    } else {
        // slowing to well under the straight-line pace reads as yielding
        let first_step = (traj[0][0] * traj[0][0] + traj[0][1] * traj[0][1]).sqrt();
        let avg_step = total / traj.len() as f64;
        if first_step > 1e-6 && avg_step < 0.6 * first_step {
            "yield"
        } else {
            "straight"
        }
    }
}

fn traj_sq_dist(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .sum()
}

/// Lloyd's iterations with k-means++ seeding; deterministic for a fixed
/// seed. Stops when the assignment is stable or after 100 iterations.
/// Returns the anchors plus the per-iteration objective (sum of squared
/// distances), which is nonincreasing.
pub fn cluster_anchors_traced(
    trajectories: &[Vec<[f64; 2]>],
    k: usize,
    seed: u64,
) -> Result<(AnchorSet, Vec<f64>)> {
    require(k >= 1, "need at least one cluster")?;
    require(
        trajectories.len() >= k,
        format!("need at least {k} trajectories, got {}", trajectories.len()),
    )?;
    let horizon = trajectories[0].len();
    require(horizon >= 1, "trajectories must be nonempty")?;
    require(
        trajectories.iter().all(|t| t.len() == horizon),
        "all trajectories must share one horizon",
    )?;
    let mut rng = crate::rng(seed);

    // k-means++ seeding
    let mut centers: Vec<Vec<[f64; 2]>> = Vec::with_capacity(k);
    centers.push(trajectories[rng.gen_range(0..trajectories.len())].clone());
    while centers.len() < k {
        let d2: Vec<f64> = trajectories
            .iter()
            .map(|t| {
                centers.iter().map(|c| traj_sq_dist(t, c)).fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            rng.gen_range(0..trajectories.len())
        } else {
            let mut pick = rng.gen_range(0.0..total);
            let mut chosen = trajectories.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if pick < w {
                    chosen = i;
                    break;
                }
                pick -= w;
            }
            chosen
        };
        centers.push(trajectories[idx].clone());
    }

    let mut assignment = vec![usize::MAX; trajectories.len()];
    let mut objective_trace = Vec::new();
    for _ in 0..100 {
        // assignment step
        let mut changed = false;
        let mut objective = 0.0;
        for (i, t) in trajectories.iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = traj_sq_dist(t, center);
                if d < best.1 {
                    best = (c, d);
                }
            }
            objective += best.1;
            if assignment[i] != best.0 {
                assignment[i] = best.0;
                changed = true;
            }
        }
        objective_trace.push(objective);
        if !changed {
            break;
        }
        // update step; empty clusters keep their previous centroid
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<[f64; 2]>> = trajectories
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(t, _)| t)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![[0.0; 2]; horizon];
            for m in &members {
                for (t, p) in m.iter().enumerate() {
                    mean[t][0] += p[0];
                    mean[t][1] += p[1];
                }
            }
            for p in mean.iter_mut() {
                p[0] /= members.len() as f64;
                p[1] /= members.len() as f64;
            }
            *center = mean;
        }
    }

    let labels = centers.iter().map(|c| maneuver_label(c).to_string()).collect();
    Ok((AnchorSet { anchors: centers, labels }, objective_trace))
}

pub fn cluster_anchors(trajectories: &[Vec<[f64; 2]>], k: usize, seed: u64) -> Result<AnchorSet> {
    cluster_anchors_traced(trajectories, k, seed).map(|(a, _)| a)
}

/// `exp(−(1/T) Σ_t ‖ŷ_t − a_t‖²)`: 1 iff the trajectories are identical.
pub fn anchor_similarity(traj: &[[f64; 2]], anchor: &[[f64; 2]]) -> Result<f64> {
    require(traj.len() == anchor.len(), "similarity needs equal horizons")?;
    require(!traj.is_empty(), "similarity needs a nonempty horizon")?;
    let mean_sq = traj_sq_dist(traj, anchor) / traj.len() as f64;
    Ok((-mean_sq).exp())
}

// ── world model ──────────────────────────────────────────────────────────

/// Candidate future trajectories of one subject with scores and flags.
#[derive(Debug, Clone)]
pub struct TrajectorySet {
    /// Modes in the subject frame, each `T_f` points.
    pub modes: Vec<Vec<[f64; 2]>>,
    pub logits: Vec<f64>,
    pub feasible: Vec<bool>,
    pub utilities: Vec<f64>,
}

impl TrajectorySet {
    pub fn new(modes: Vec<Vec<[f64; 2]>>, logits: Vec<f64>) -> Result<TrajectorySet> {
        require(!modes.is_empty(), "trajectory set needs at least one mode")?;
        require(modes.len() == logits.len(), "modes and logits must align")?;
        let horizon = modes[0].len();
        require(modes.iter().all(|m| m.len() == horizon), "all modes share one horizon")?;
        let m = modes.len();
        Ok(TrajectorySet { modes, logits, feasible: vec![false; m], utilities: vec![0.0; m] })
    }

    pub fn horizon(&self) -> usize {
        self.modes[0].len()
    }
}

/// Composite utility weights α₁..α₄ (progress, comfort, risk, compliance).
#[derive(Debug, Clone, Copy)]
pub struct UtilityWeights {
    pub progress: f64,
    pub comfort: f64,
    pub risk: f64,
    pub compliance: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        UtilityWeights { progress: 1.0, comfort: 0.5, risk: 2.0, compliance: 0.5 }
    }
}

impl UtilityWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.progress, self.comfort, self.risk, self.compliance];
        require(all.iter().all(|w| w.is_finite() && *w >= 0.0), "utility weights must be ≥ 0")?;
        require(all.iter().any(|w| *w > 0.0), "at least one utility weight must be positive")
    }
}

/// World-frame planning context at one step.
#[derive(Debug, Clone, Default)]
pub struct WorldModel {
    pub drivable: Vec<Vec<[f64; 2]>>,
    pub static_obstacles: Vec<OrientedBox2D>,
    /// Per agent: predicted footprints at future steps 1.. (same-timestep
    /// comparison; the last footprint persists beyond its horizon).
    pub dynamic: Vec<Vec<OrientedBox2D>>,
    pub route: Vec<[f64; 2]>,
    pub ego_pose: ([f64; 2], f64),
    pub ego_half_extents: [f64; 2],
}

impl WorldModel {
    fn dynamic_at(&self, agent: usize, step: usize) -> Option<&OrientedBox2D> {
        let track = &self.dynamic[agent];
        if track.is_empty() {
            None
        } else {
            Some(&track[step.min(track.len() - 1)])
        }
    }
}

/// Ego footprints swept along a subject-frame trajectory, with headings
/// estimated from the trajectory points (a stationary prefix keeps the
/// current heading).
pub fn sweep_footprints(traj: &[[f64; 2]], world: &WorldModel) -> Result<Vec<OrientedBox2D>> {
    let mut seq = vec![[0.0, 0.0]];
    seq.extend_from_slice(traj);
    let world_pts = to_world(&seq, world.ego_pose);
    let mut out = Vec::with_capacity(traj.len());
    for k in 1..seq.len() {
        let yaw_subject = yaw_from_trajectory(&seq, k)?;
        let yaw = normalize_angle(world.ego_pose.1 + yaw_subject);
        out.push(OrientedBox2D::new(world_pts[k], world.ego_half_extents, yaw));
    }
    Ok(out)
}

/// 1 iff every swept footprint stays inside the drivable area, intersects
/// no static obstacle, and intersects no same-timestep dynamic footprint.
pub fn feasible(traj: &[[f64; 2]], world: &WorldModel) -> Result<bool> {
    let footprints = sweep_footprints(traj, world)?;
    for (k, fp) in footprints.iter().enumerate() {
        if !box_inside_polygons(fp, &world.drivable) {
            return Ok(false);
        }
        for s in &world.static_obstacles {
            if boxes_intersect(fp, s) {
                return Ok(false);
            }
        }
        for a in 0..world.dynamic.len() {
            if let Some(d) = world.dynamic_at(a, k) {
                if boxes_intersect(fp, d) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Signed route progress: arc length of the projection of the final
/// trajectory point onto the route, minus that of the current position.
fn route_progress(traj: &[[f64; 2]], world: &WorldModel) -> f64 {
    if world.route.len() < 2 || traj.is_empty() {
        return 0.0;
    }
    let arc_of = |p: [f64; 2]| -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut acc = 0.0;
        for w in world.route.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ab = [b[0] - a[0], b[1] - a[1]];
            let len = (ab[0] * ab[0] + ab[1] * ab[1]).sqrt();
            if len > 0.0 {
                let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / (len * len))
                    .clamp(0.0, 1.0);
                let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                if d < best.0 {
                    best = (d, acc + t * len);
                }
            }
            acc += len;
        }
        best.1
    };
    let world_pts = to_world(traj, world.ego_pose);
    arc_of(*world_pts.last().unwrap()) - arc_of([world.ego_pose.0[0], world.ego_pose.0[1]])
}

/// Comfort penalty: mean squared second difference of positions plus mean
/// absolute heading change, over the trajectory prefixed with the current
/// position.
fn comfort_penalty(traj: &[[f64; 2]]) -> f64 {
    let mut seq = vec![[0.0, 0.0]];
    seq.extend_from_slice(traj);
    let n = seq.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc_sq = 0.0;
    for k in 1..n - 1 {
        let ax = seq[k + 1][0] - 2.0 * seq[k][0] + seq[k - 1][0];
        let ay = seq[k + 1][1] - 2.0 * seq[k][1] + seq[k - 1][1];
        acc_sq += ax * ax + ay * ay;
    }
    acc_sq /= (n - 2) as f64;
    let yaws: Vec<f64> =
        (0..n).map(|k| yaw_from_trajectory(&seq, k).unwrap_or(0.0)).collect();
    let mut turn = 0.0;
    for w in yaws.windows(2) {
        turn += normalize_angle(w[1] - w[0]).abs();
    }
    turn /= (n - 1) as f64;
    acc_sq + turn
}

const RISK_SIGMA: f64 = 1.0;

/// Risk: max over timesteps of `exp(−g²/2σ²)` with `g` the clearance to
/// the nearest same-timestep dynamic footprint or static obstacle.
fn risk_penalty(traj: &[[f64; 2]], world: &WorldModel) -> Result<f64> {
    let footprints = sweep_footprints(traj, world)?;
    let mut worst: f64 = 0.0;
    for (k, fp) in footprints.iter().enumerate() {
        let mut nearest = f64::INFINITY;
        for s in &world.static_obstacles {
            let g = if boxes_intersect(fp, s) { 0.0 } else { obb_clearance(fp, s) };
            nearest = nearest.min(g);
        }
        for a in 0..world.dynamic.len() {
            if let Some(d) = world.dynamic_at(a, k) {
                let g = if boxes_intersect(fp, d) { 0.0 } else { obb_clearance(fp, d) };
                nearest = nearest.min(g);
            }
        }
        if nearest.is_finite() {
            worst = worst.max((-nearest * nearest / (2.0 * RISK_SIGMA * RISK_SIGMA)).exp());
        }
    }
    Ok(worst)
}

/// Breakdown of the composite utility score.
#[derive(Debug, Clone, Copy)]
pub struct UtilityTerms {
    pub progress: f64,
    pub comfort: f64,
    pub risk: f64,
    pub compliance: f64,
    pub score: f64,
}

/// Composite utility `α₁P − α₂J − α₃R + α₄C` with binary rule compliance
/// `C` (staying inside the drivable area).
pub fn utility(traj: &[[f64; 2]], world: &WorldModel, w: &UtilityWeights) -> Result<UtilityTerms> {
    let progress = route_progress(traj, world);
    let comfort = comfort_penalty(traj);
    let risk = risk_penalty(traj, world)?;
    let footprints = sweep_footprints(traj, world)?;
    let compliance = if footprints.iter().all(|fp| box_inside_polygons(fp, &world.drivable)) {
        1.0
    } else {
        0.0
    };
    let score = w.progress * progress - w.comfort * comfort - w.risk * risk
        + w.compliance * compliance;
    Ok(UtilityTerms { progress, comfort, risk, compliance, score })
}

/// Outcome of hierarchical mode selection.
#[derive(Debug, Clone)]
pub struct Selection {
    pub index: usize,
    pub utilities: Vec<f64>,
    pub feasible: Vec<bool>,
    pub risks: Vec<f64>,
    /// True when no mode was feasible and the min-risk fallback was used.
    pub fallback: bool,
}

/// Feasibility-masked argmax of utility; ties break toward the lowest mode
/// index. With no feasible mode the minimum-risk mode is returned with the
/// `fallback` flag set.
pub fn select(traj_set: &mut TrajectorySet, world: &WorldModel, w: &UtilityWeights) -> Result<Selection> {
    w.validate()?;
    let m = traj_set.modes.len();
    let mut utilities = Vec::with_capacity(m);
    let mut flags = Vec::with_capacity(m);
    let mut risks = Vec::with_capacity(m);
    for mode in &traj_set.modes {
        let terms = utility(mode, world, w)?;
        utilities.push(terms.score);
        risks.push(terms.risk);
        flags.push(feasible(mode, world)?);
    }
    traj_set.utilities = utilities.clone();
    traj_set.feasible = flags.clone();

    let mut best: Option<usize> = None;
    for i in 0..m {
        if !flags[i] {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if utilities[i] > utilities[b] => Some(i),
            other => other,
        };
    }
    match best {
        Some(index) => Ok(Selection { index, utilities, feasible: flags, risks, fallback: false }),
        None => {
            let mut index = 0;
            for i in 1..m {
                if risks[i] < risks[index] {
                    index = i;
                }
            }
            Ok(Selection { index, utilities, feasible: flags, risks, fallback: true })
        }
    }
}

// ── instance queue ───────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    /// (timestamp, feature), oldest first, length ≤ capacity.
    pub buffer: VecDeque<(f64, Tensor)>,
    pub misses: usize,
}

/// Temporal buffer of per-track feature embeddings with greedy
/// cosine-similarity association.
#[derive(Debug, Clone)]
pub struct InstanceQueue {
    pub capacity: usize,
    pub tracking_threshold: f64,
    pub tracks: Vec<Track>,
    next_id: u64,
    last_timestamp: Option<f64>,
}

fn cosine(a: &Tensor, b: &Tensor) -> f64 {
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let na: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl InstanceQueue {
    pub fn new(capacity: usize, tracking_threshold: f64) -> Result<InstanceQueue> {
        require(capacity >= 1, "queue capacity must be positive")?;
        Ok(InstanceQueue {
            capacity,
            tracking_threshold,
            tracks: Vec::new(),
            next_id: 0,
            last_timestamp: None,
        })
    }

    /// Greedy nearest-embedding association: matched tracks append the new
    /// feature (evicting the oldest beyond capacity), unmatched detections
    /// open tracks, and tracks unmatched for 2 consecutive updates close.
    pub fn update(&mut self, detections: &[Tensor], t: f64) -> Result<()> {
        if let Some(last) = self.last_timestamp {
            require(t > last, format!("timestamps must increase, got {t} after {last}"))?;
        }
        self.last_timestamp = Some(t);

        let mut pairs = Vec::new();
        for (ti, track) in self.tracks.iter().enumerate() {
            let newest = &track.buffer.back().expect("tracks are never empty").1;
            for (di, det) in detections.iter().enumerate() {
                let sim = cosine(newest, det);
                if sim >= self.tracking_threshold {
                    pairs.push((sim, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut track_used = vec![false; self.tracks.len()];
        let mut det_used = vec![false; detections.len()];
        for (_, ti, di) in pairs {
            if track_used[ti] || det_used[di] {
                continue;
            }
            track_used[ti] = true;
            det_used[di] = true;
            let track = &mut self.tracks[ti];
            track.buffer.push_back((t, detections[di].clone()));
            while track.buffer.len() > self.capacity {
                track.buffer.pop_front();
            }
            track.misses = 0;
        }
        for (ti, used) in track_used.iter().enumerate() {
            if !used {
                self.tracks[ti].misses += 1;
            }
        }
        self.tracks.retain(|tr| tr.misses < 2);
        for (di, det) in detections.iter().enumerate() {
            if !det_used[di] {
                let mut buffer = VecDeque::new();
                buffer.push_back((t, det.clone()));
                self.tracks.push(Track { id: self.next_id, buffer, misses: 0 });
                self.next_id += 1;
            }
        }
        Ok(())
    }
}

// ── closed-loop replanning ───────────────────────────────────────────────

/// Produces candidate ego trajectories for the current world state.
pub trait ModePredictor {
    fn predict(&mut self, world: &WorldModel, step: usize) -> Result<TrajectorySet>;
}

/// Anchors used directly as candidate modes.
pub struct AnchorPredictor<'a>(pub &'a AnchorSet);

impl ModePredictor for AnchorPredictor<'_> {
    fn predict(&mut self, _world: &WorldModel, _step: usize) -> Result<TrajectorySet> {
        TrajectorySet::new(self.0.anchors.clone(), vec![0.0; self.0.count()])
    }
}

/// One step of the replanning decision log.
#[derive(Debug, Clone)]
pub struct ReplanRecord {
    pub step: usize,
    pub utilities: Vec<f64>,
    pub feasible: Vec<bool>,
    pub selected: usize,
    pub fallback: bool,
    pub pose: ([f64; 2], f64),
}

impl ReplanRecord {
    /// Line-delimited record: step, per-mode utility, feasibility flags,
    /// selected index, committed pose.
    pub fn to_line(&self) -> String {
        let utils =
            self.utilities.iter().map(|u| format!("{u:.6}")).collect::<Vec<_>>().join(",");
        let flags =
            self.feasible.iter().map(|f| if *f { "1" } else { "0" }).collect::<Vec<_>>().join(",");
        format!(
            "step={} utilities=[{}] feasible=[{}] selected={} fallback={} pose=({:.6},{:.6},{:.6})",
            self.step,
            utils,
            flags,
            self.selected,
            self.fallback as u8,
            self.pose.0[0],
            self.pose.0[1],
            self.pose.1
        )
    }
}

/// Closed-loop replanning over a stream of world snapshots: predict,
/// score, select, commit the first action, advance. The ego pose evolves
/// by the committed actions; each snapshot supplies the obstacle state.
pub fn replan_loop(
    stream: &[WorldModel],
    predictor: &mut dyn ModePredictor,
    weights: &UtilityWeights,
    initial_pose: ([f64; 2], f64),
) -> Result<Vec<ReplanRecord>> {
    require(!stream.is_empty(), "replan loop needs a nonempty stream")?;
    let mut pose = initial_pose;
    let mut log = Vec::with_capacity(stream.len());
    for (step, snapshot) in stream.iter().enumerate() {
        let mut world = snapshot.clone();
        world.ego_pose = pose;
        let mut modes = predictor.predict(&world, step)?;
        let selection = select(&mut modes, &world, weights)?;
        let chosen = &modes.modes[selection.index];
        // commit the first action
        let first_world = to_world(&chosen[..1.min(chosen.len())], pose);
        let new_yaw = {
            let mut seq = vec![[0.0, 0.0]];
            seq.extend_from_slice(chosen);
            normalize_angle(pose.1 + yaw_from_trajectory(&seq, 1)?)
        };
        pose = (first_world[0], new_yaw);
        log.push(ReplanRecord {
            step,
            utilities: selection.utilities.clone(),
            feasible: selection.feasible.clone(),
            selected: selection.index,
            fallback: selection.fallback,
            pose,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::point_in_any_polygon;
    use approx::assert_abs_diff_eq;

    fn straight(n: usize, step: f64) -> Vec<[f64; 2]> {
        (1..=n).map(|k| [k as f64 * step, 0.0]).collect()
    }

    #[test]
    fn single_cluster_is_pointwise_mean() {
        let trajs = vec![straight(3, 1.0), straight(3, 2.0), straight(3, 3.0)];
        let anchors = cluster_anchors(&trajs, 1, 7).unwrap();
        for (t, p) in anchors.anchors[0].iter().enumerate() {
            assert_abs_diff_eq!(p[0], 2.0 * (t + 1) as f64, epsilon = 1e-12);
            assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_separated_bundles_recover_bundle_means() {
        let mut trajs = Vec::new();
        for d in [-0.2, 0.0, 0.2] {
            trajs.push((1..=3).map(|k| [k as f64 + d, 0.0]).collect::<Vec<_>>());
            trajs.push((1..=3).map(|k| [k as f64 + d, 40.0]).collect::<Vec<_>>());
        }
        let anchors = cluster_anchors(&trajs, 2, 3).unwrap();
        let mut ys: Vec<f64> = anchors.anchors.iter().map(|a| a[0][1]).collect();
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(ys[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ys[1], 40.0, epsilon = 1e-9);
        for a in &anchors.anchors {
            assert_abs_diff_eq!(a[0][0], 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn k_distinct_inputs_are_a_fixed_point() {
        let trajs = vec![straight(2, 1.0), straight(2, 5.0), straight(2, 9.0)];
        let anchors = cluster_anchors(&trajs, 3, 11).unwrap();
        let mut firsts: Vec<f64> = anchors.anchors.iter().map(|a| a[0][0]).collect();
        firsts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(firsts, vec![1.0, 5.0, 9.0]);
    }

    #[test]
    fn objective_is_nonincreasing() {
        let mut rng = crate::rng(40);
        for seed in 0..5 {
            let trajs: Vec<Vec<[f64; 2]>> = (0..30)
                .map(|_| {
                    (1..=4)
                        .map(|k| {
                            [
                                k as f64 + rand::Rng::gen_range(&mut rng, -1.0..1.0),
                                rand::Rng::gen_range(&mut rng, -5.0..5.0),
                            ]
                        })
                        .collect()
                })
                .collect();
            let (_, trace) = cluster_anchors_traced(&trajs, 4, seed).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "objective increased: {:?}", trace);
            }
        }
    }

    #[test]
    fn too_few_trajectories_is_contract_error() {
        let trajs = vec![straight(2, 1.0)];
        assert!(cluster_anchors(&trajs, 2, 0).is_err());
    }

    #[test]
    fn similarity_closed_forms() {
        let a = straight(4, 1.0);
        assert_abs_diff_eq!(anchor_similarity(&a, &a).unwrap(), 1.0, epsilon = 1e-12);

        // every point offset by distance c → exp(−c²)
        let c = 0.7;
        let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0], p[1] + c]).collect();
        assert_abs_diff_eq!(anchor_similarity(&a, &b).unwrap(), (-c * c).exp(), epsilon = 1e-12);

        // 2-point toy with offsets 1 and 2 → exp(−(1+4)/2)
        let p = vec![[0.0, 0.0], [1.0, 0.0]];
        let q = vec![[0.0, 1.0], [1.0, 2.0]];
        assert_abs_diff_eq!(anchor_similarity(&p, &q).unwrap(), (-2.5_f64).exp(), epsilon = 1e-12);

        assert!(anchor_similarity(&a, &p).is_err());
    }

    #[test]
    fn similarity_is_translation_invariant() {
        let a = straight(3, 1.5);
        let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 0.3, p[1] - 0.1]).collect();
        let s0 = anchor_similarity(&a, &b).unwrap();
        let shift = [12.0, -4.0];
        let at: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect();
        let bt: Vec<[f64; 2]> = b.iter().map(|p| [p[0] + shift[0], p[1] + shift[1]]).collect();
        assert_abs_diff_eq!(anchor_similarity(&at, &bt).unwrap(), s0, epsilon = 1e-12);
        assert!(s0 > 0.0 && s0 <= 1.0);
    }

    fn open_world() -> WorldModel {
        WorldModel {
            drivable: vec![vec![[-100.0, -100.0], [100.0, -100.0], [100.0, 100.0], [-100.0, 100.0]]],
            static_obstacles: Vec::new(),
            dynamic: Vec::new(),
            route: (0..20).map(|k| [k as f64 * 5.0, 0.0]).collect(),
            ego_pose: ([0.0, 0.0], 0.0),
            ego_half_extents: [2.04, 0.92],
        }
    }

    #[test]
    fn feasibility_rules() {
        let world = open_world();
        assert!(feasible(&straight(4, 1.0), &world).unwrap());

        // static obstacle on the path midpoint
        let mut blocked = world.clone();
        blocked
            .static_obstacles
            .push(OrientedBox2D::new([2.0, 0.0], [0.5, 0.5], 0.0));
        assert!(!feasible(&straight(4, 1.0), &blocked).unwrap());

        // exiting the drivable polygon at the last step (ego half-length
        // 2.04 m: the last footprint front crosses x = 5.3)
        let mut narrow = world.clone();
        narrow.drivable = vec![vec![[-5.0, -5.0], [5.3, -5.0], [5.3, 5.0], [-5.0, 5.0]]];
        let path = straight(4, 1.0);
        assert!(!feasible(&path, &narrow).unwrap());
        // the point-in-polygon oracle agrees step by step
        let fps = sweep_footprints(&path, &narrow).unwrap();
        let inside: Vec<bool> = fps
            .iter()
            .map(|fp| fp.corners().iter().all(|&c| point_in_any_polygon(c, &narrow.drivable)))
            .collect();
        assert!(inside[..3].iter().all(|&b| b));
        assert!(!inside[3]);
    }

    #[test]
    fn utility_terms_and_monotonicity() {
        // stationary trajectory in an empty world with unit weights → α₄
        let world = WorldModel {
            drivable: Vec::new(),
            static_obstacles: Vec::new(),
            dynamic: Vec::new(),
            route: Vec::new(),
            ego_pose: ([0.0, 0.0], 0.0),
            ego_half_extents: [2.04, 0.92],
        };
        let w1 = UtilityWeights { progress: 1.0, comfort: 1.0, risk: 1.0, compliance: 1.0 };
        let stationary = vec![[0.0, 0.0]; 4];
        let terms = utility(&stationary, &world, &w1).unwrap();
        assert_abs_diff_eq!(terms.progress, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(terms.comfort, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(terms.risk, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(terms.compliance, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(terms.score, 1.0, epsilon = 1e-12);

        // doubling α₁ with positive progress strictly increases the score
        let world = open_world();
        let path = straight(4, 2.0);
        let base = utility(&path, &world, &w1).unwrap();
        assert!(base.progress > 0.0);
        let w2 = UtilityWeights { progress: 2.0, ..w1 };
        let boosted = utility(&path, &world, &w2).unwrap();
        assert!(boosted.score > base.score);

        // lower comfort penalty scores higher, other terms fixed
        let smooth = straight(4, 2.0);
        let mut jerky = smooth.clone();
        jerky[1][1] += 1.5;
        jerky[2][1] -= 1.5;
        let s_smooth = utility(&smooth, &world, &w1).unwrap();
        let s_jerky = utility(&jerky, &world, &w1).unwrap();
        assert!(s_smooth.comfort < s_jerky.comfort);
    }

    #[test]
    fn selection_rules() {
        let world = open_world();
        let w = UtilityWeights::default();

        // one feasible mode → that mode
        let mut set = TrajectorySet::new(
            vec![straight(4, 1.0)],
            vec![0.0],
        )
        .unwrap();
        let sel = select(&mut set, &world, &w).unwrap();
        assert_eq!(sel.index, 0);
        assert!(!sel.fallback);

        // ties break toward the lowest index: two identical fast modes
        let mut set = TrajectorySet::new(
            vec![straight(4, 0.5), straight(4, 2.0), straight(4, 2.0)],
            vec![0.0; 3],
        )
        .unwrap();
        let sel = select(&mut set, &world, &w).unwrap();
        assert_eq!(sel.index, 1);

        // infeasible-everywhere falls back to minimum risk with the flag
        let mut walled = world.clone();
        walled.drivable = vec![vec![[-1.0, -1.0], [-0.5, -1.0], [-0.5, 1.0], [-1.0, 1.0]]];
        let mut set =
            TrajectorySet::new(vec![straight(4, 1.0), straight(4, 2.0)], vec![0.0; 2]).unwrap();
        let sel = select(&mut set, &walled, &w).unwrap();
        assert!(sel.fallback);
    }

    #[test]
    fn selection_never_picks_infeasible_when_feasible_exists() {
        let mut rng = crate::rng(900);
        let w = UtilityWeights::default();
        for _ in 0..100 {
            let mut world = open_world();
            // a random obstacle near the path corridor
            let ox = rand::Rng::gen_range(&mut rng, 1.0..8.0);
            let oy = rand::Rng::gen_range(&mut rng, -2.0..2.0);
            world
                .static_obstacles
                .push(OrientedBox2D::new([ox, oy], [0.8, 0.8], rand::Rng::gen_range(&mut rng, -1.5..1.5)));
            let modes: Vec<Vec<[f64; 2]>> = (0..6)
                .map(|m| {
                    let bend = (m as f64 - 2.5) * 0.6;
                    (1..=4).map(|k| [k as f64 * 1.5, bend * k as f64 * 0.5]).collect()
                })
                .collect();
            let mut set = TrajectorySet::new(modes, vec![0.0; 6]).unwrap();
            let sel = select(&mut set, &world, &w).unwrap();
            if sel.feasible.iter().any(|&f| f) {
                assert!(sel.feasible[sel.index]);
                // brute-force argmax over the feasible set
                let mut best = None;
                for i in 0..6 {
                    if sel.feasible[i] {
                        best = match best {
                            None => Some(i),
                            Some(b) if sel.utilities[i] > sel.utilities[b] => Some(i),
                            other => other,
                        };
                    }
                }
                assert_eq!(sel.index, best.unwrap());
            }
        }
    }

    fn feat(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn queue_opens_appends_evicts_and_closes() {
        let mut q = InstanceQueue::new(3, 0.5).unwrap();
        // empty queue + 2 detections → 2 new tracks of length 1
        q.update(&[feat(&[1.0, 0.0]), feat(&[0.0, 1.0])], 0.0).unwrap();
        assert_eq!(q.tracks.len(), 2);
        assert!(q.tracks.iter().all(|t| t.buffer.len() == 1));

        // capacity 3: four appends leave the newest 3
        for k in 1..=4 {
            q.update(&[feat(&[1.0, 0.0]), feat(&[0.0, 1.0])], k as f64).unwrap();
        }
        assert_eq!(q.tracks.len(), 2);
        assert!(q.tracks.iter().all(|t| t.buffer.len() == 3));
        assert_abs_diff_eq!(q.tracks[0].buffer.front().unwrap().0, 2.0, epsilon = 1e-12);

        // association below threshold opens a new track
        q.update(&[feat(&[1.0, 0.0]), feat(&[0.0, 1.0]), feat(&[-1.0, 0.0])], 5.0).unwrap();
        assert_eq!(q.tracks.len(), 3);

        // unmatched for 2 consecutive frames → closed
        q.update(&[feat(&[1.0, 0.0]), feat(&[0.0, 1.0])], 6.0).unwrap();
        q.update(&[feat(&[1.0, 0.0]), feat(&[0.0, 1.0])], 7.0).unwrap();
        assert_eq!(q.tracks.len(), 2);

        // non-monotonic timestamp is a contract violation
        assert!(q.update(&[feat(&[1.0, 0.0])], 6.5).is_err());
    }

    #[test]
    fn replan_static_world_keeps_heading() {
        let anchors = AnchorSet {
            anchors: vec![straight(4, 1.0), (1..=4).map(|k| [k as f64, 0.2 * k as f64]).collect()],
            labels: vec!["straight".into(), "left-turn".into()],
        };
        let mut predictor = AnchorPredictor(&anchors);
        let stream = vec![open_world(); 6];
        let log = replan_loop(&stream, &mut predictor, &UtilityWeights::default(), ([0.0, 0.0], 0.0))
            .unwrap();
        assert_eq!(log.len(), 6);
        for w in log.windows(2) {
            assert_abs_diff_eq!(w[1].pose.1, w[0].pose.1, epsilon = 1e-6);
        }
    }

    #[test]
    fn replan_switches_when_obstacle_appears() {
        // mode 0 drives on, mode 1 creeps forward
        let anchors = AnchorSet {
            anchors: vec![straight(4, 1.5), straight(4, 0.1)],
            labels: vec!["straight".into(), "yield".into()],
        };
        let mut predictor = AnchorPredictor(&anchors);
        let mut stream = vec![open_world(); 6];
        // an obstacle appears on the straight path from step 3 onward
        // (the ego has advanced to x = 4.5 by then)
        for snapshot in stream.iter_mut().skip(3) {
            snapshot
                .static_obstacles
                .push(OrientedBox2D::new([8.0, 0.0], [1.0, 1.0], 0.0));
        }
        let log = replan_loop(&stream, &mut predictor, &UtilityWeights::default(), ([0.0, 0.0], 0.0))
            .unwrap();
        assert_eq!(log.len(), 6);
        assert_eq!(log[0].selected, 0, "straight is preferred while clear");
        let switch_step = log.iter().position(|r| r.selected != 0);
        assert_eq!(switch_step, Some(3), "selection changes when the path becomes blocked");
    }

    #[test]
    fn replan_record_line_format_is_stable() {
        let rec = ReplanRecord {
            step: 3,
            utilities: vec![0.5, -1.25],
            feasible: vec![true, false],
            selected: 0,
            fallback: false,
            pose: ([1.0, -2.0], 0.5),
        };
        assert_eq!(
            rec.to_line(),
            "step=3 utilities=[0.500000,-1.250000] feasible=[1,0] selected=0 fallback=0 pose=(1.000000,-2.000000,0.500000)"
        );
    }
}

//! Evaluation: minADE / minFDE / miss rate for prediction, per-horizon L2
//! error for planning, and the corrected collision protocol (oriented-box
//! intersection tests with trajectory-estimated ego yaw) next to the
//! legacy occupancy-grid oracle it replaces.

use std::fmt::Write as _;

use crate::error::{require, Result};
use crate::geometry::{boxes_intersect, normalize_angle, to_world, yaw_from_trajectory, OrientedBox2D};

/// Planning evaluation settings.
#[derive(Debug, Clone)]
pub struct PlanEvalConfig {
    /// Evaluation horizons in seconds, positive and increasing.
    pub horizons: Vec<f64>,
    pub step_period: f64,
    pub ego_half_extents: [f64; 2],
    pub miss_threshold: f64,
}

impl Default for PlanEvalConfig {
    fn default() -> Self {
        PlanEvalConfig {
            horizons: vec![1.0, 2.0, 3.0],
            step_period: 0.5,
            ego_half_extents: [2.04, 0.92],
            miss_threshold: 2.0,
        }
    }
}

impl PlanEvalConfig {
    pub fn validate(&self) -> Result<()> {
        require(!self.horizons.is_empty(), "needs at least one horizon")?;
        require(self.horizons.iter().all(|&h| h > 0.0), "horizons must be positive")?;
        require(
            self.horizons.windows(2).all(|w| w[1] > w[0]),
            "horizons must be strictly increasing",
        )?;
        require(self.step_period > 0.0, "step period must be positive")?;
        require(self.miss_threshold > 0.0, "miss threshold must be positive")?;
        Ok(())
    }

    /// Nearest discrete step for a horizon time.
    pub fn step_of(&self, horizon: f64) -> usize {
        (horizon / self.step_period).round().max(1.0) as usize
    }

    pub fn max_step(&self) -> usize {
        self.horizons.iter().map(|&h| self.step_of(h)).max().unwrap_or(1)
    }
}

// ── prediction metrics ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinAdeFde {
    pub min_ade: f64,
    pub min_fde: f64,
    pub ade_mode: usize,
    pub fde_mode: usize,
}

/// Minimum-over-modes average and final displacement errors; the two
/// minima may come from different modes (both are reported).
pub fn min_ade_fde(modes: &[Vec<[f64; 2]>], gt: &[[f64; 2]]) -> Result<MinAdeFde> {
    require(!modes.is_empty(), "needs at least one mode")?;
    require(!gt.is_empty(), "ground truth must be nonempty")?;
    let mut out = MinAdeFde { min_ade: f64::INFINITY, min_fde: f64::INFINITY, ade_mode: 0, fde_mode: 0 };
    for (m, mode) in modes.iter().enumerate() {
        require(mode.len() == gt.len(), "mode horizon does not match ground truth")?;
        let ade = mode
            .iter()
            .zip(gt)
            .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt())
            .sum::<f64>()
            / gt.len() as f64;
        let (p, g) = (mode.last().unwrap(), gt.last().unwrap());
        let fde = ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt();
        if ade < out.min_ade {
            out.min_ade = ade;
            out.ade_mode = m;
        }
        if fde < out.min_fde {
            out.min_fde = fde;
            out.fde_mode = m;
        }
    }
    Ok(out)
}

/// Fraction of samples whose best final displacement exceeds `threshold`.
pub fn miss_rate(samples: &[(Vec<Vec<[f64; 2]>>, Vec<[f64; 2]>)], threshold: f64) -> Result<f64> {
    require(threshold > 0.0, "miss threshold must be positive")?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut misses = 0usize;
    for (modes, gt) in samples {
        let m = min_ade_fde(modes, gt)?;
        if m.min_fde > threshold {
            misses += 1;
        }
    }
    Ok(misses as f64 / samples.len() as f64)
}

// ── planning metrics ─────────────────────────────────────────────────────

/// L2 distance between plan and ground truth at each horizon (nearest
/// step) plus the average over horizons.
pub fn planning_l2(
    plan: &[[f64; 2]],
    gt: &[[f64; 2]],
    cfg: &PlanEvalConfig,
) -> Result<(Vec<f64>, f64)> {
    cfg.validate()?;
    let max_step = cfg.max_step();
    require(
        plan.len() >= max_step,
        format!("plan covers {} steps but the longest horizon needs {max_step}", plan.len()),
    )?;
    require(gt.len() >= max_step, "ground truth does not cover the longest horizon")?;
    let mut per = Vec::with_capacity(cfg.horizons.len());
    for &h in &cfg.horizons {
        let k = cfg.step_of(h) - 1;
        let (p, g) = (plan[k], gt[k]);
        per.push(((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt());
    }
    let avg = per.iter().sum::<f64>() / per.len() as f64;
    Ok((per, avg))
}

/// Obstacle states over the future steps of one scenario.
#[derive(Debug, Clone, Default)]
pub struct WorldTimeline {
    pub static_obstacles: Vec<OrientedBox2D>,
    /// `dynamic[k]`: all dynamic footprints at future step k+1.
    pub dynamic: Vec<Vec<OrientedBox2D>>,
}

/// Corrected collision protocol: at every step up to each horizon the ego
/// box is placed at the plan point with trajectory-estimated yaw and
/// tested for oriented-box intersection against every same-timestep
/// obstacle footprint. A collision at step k flags every horizon ≥ k.
/// `use_yaw = false` reproduces the legacy simplification of freezing the
/// ego heading at its current value.
pub fn collision_flags(
    plan: &[[f64; 2]],
    ego_pose: ([f64; 2], f64),
    timeline: &WorldTimeline,
    cfg: &PlanEvalConfig,
    use_yaw: bool,
) -> Result<Vec<bool>> {
    cfg.validate()?;
    let max_step = cfg.max_step();
    require(plan.len() >= max_step, "plan does not cover the longest horizon")?;
    require(
        timeline.dynamic.is_empty() || timeline.dynamic.len() >= max_step,
        format!(
            "world timeline covers {} steps but the longest horizon needs {max_step}",
            timeline.dynamic.len()
        ),
    )?;

    let mut seq = vec![[0.0, 0.0]];
    seq.extend_from_slice(plan);
    let world_pts = to_world(&seq, ego_pose);
    let mut first_hit: Option<usize> = None;
    for k in 1..=max_step {
        let yaw = if use_yaw {
            normalize_angle(ego_pose.1 + yaw_from_trajectory(&seq, k)?)
        } else {
            ego_pose.1
        };
        let ego = OrientedBox2D::new(world_pts[k], cfg.ego_half_extents, yaw);
        let mut hit = timeline.static_obstacles.iter().any(|o| boxes_intersect(&ego, o));
        if !hit && !timeline.dynamic.is_empty() {
            hit = timeline.dynamic[k - 1].iter().any(|o| boxes_intersect(&ego, o));
        }
        if hit {
            first_hit = Some(k);
            break;
        }
    }
    Ok(cfg
        .horizons
        .iter()
        .map(|&h| first_hit.is_some_and(|k| k <= cfg.step_of(h)))
        .collect())
}

/// Percent of samples flagged per horizon.
pub fn collision_rate(flags: &[Vec<bool>], horizons: usize) -> Vec<f64> {
    if flags.is_empty() {
        return vec![0.0; horizons];
    }
    (0..horizons)
        .map(|h| {
            100.0 * flags.iter().filter(|f| f[h]).count() as f64 / flags.len() as f64
        })
        .collect()
}

/// Legacy occupancy-grid oracle: obstacles are rasterized per step onto a
/// grid of the given cell size (a cell is occupied when an obstacle covers
/// its center) and the plan collides iff one of its points lands in an
/// occupied cell. Shipped purely as the comparison baseline.
pub fn legacy_grid_collision(
    plan: &[[f64; 2]],
    ego_pose: ([f64; 2], f64),
    timeline: &WorldTimeline,
    cfg: &PlanEvalConfig,
    cell: f64,
) -> Result<Vec<bool>> {
    require(cell > 0.0, "grid cell size must be positive")?;
    cfg.validate()?;
    let max_step = cfg.max_step().min(plan.len());
    let world_pts = to_world(plan, ego_pose);
    let cell_center = |p: [f64; 2]| -> [f64; 2] {
        [(p[0] / cell).floor() * cell + cell / 2.0, (p[1] / cell).floor() * cell + cell / 2.0]
    };
    let mut first_hit: Option<usize> = None;
    for k in 1..=max_step {
        let center = cell_center(world_pts[k - 1]);
        let occupied = |o: &OrientedBox2D| o.contains(center);
        let mut hit = timeline.static_obstacles.iter().any(occupied);
        if !hit && !timeline.dynamic.is_empty() {
            hit = timeline.dynamic[k - 1].iter().any(occupied);
        }
        if hit {
            first_hit = Some(k);
            break;
        }
    }
    Ok(cfg
        .horizons
        .iter()
        .map(|&h| first_hit.is_some_and(|k| k <= cfg.step_of(h)))
        .collect())
}

// ── report rows ──────────────────────────────────────────────────────────

/// One evaluation row; diagnostics columns are optional.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub scenario: String,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss: f64,
    pub l2: Vec<f64>,
    pub l2_avg: f64,
    pub collision: Vec<bool>,
    /// I(B;I), I(B;T|I), H(B|I,T), interaction.
    pub diagnostics: Option<[f64; 4]>,
}

pub fn csv_header(cfg: &PlanEvalConfig, with_diagnostics: bool) -> String {
    let mut h = String::from("scenario,min_ade,min_fde,mr");
    for hz in &cfg.horizons {
        write!(h, ",l2_{}s", format_horizon(*hz)).unwrap();
    }
    h.push_str(",l2_avg");
    for hz in &cfg.horizons {
        write!(h, ",cr_{}s", format_horizon(*hz)).unwrap();
    }
    if with_diagnostics {
        h.push_str(",i_bi,i_bt_given_i,h_b_given_it,interaction");
    }
    h
}

fn format_horizon(h: f64) -> String {
    if (h - h.round()).abs() < 1e-9 {
        format!("{}", h.round() as i64)
    } else {
        format!("{h}")
    }
}

fn row_line(row: &MetricsRow, with_diagnostics: bool) -> String {
    let mut s = format!(
        "{},{:.6},{:.6},{:.6}",
        row.scenario, row.min_ade, row.min_fde, row.miss
    );
    for v in &row.l2 {
        write!(s, ",{v:.6}").unwrap();
    }
    write!(s, ",{:.6}", row.l2_avg).unwrap();
    for c in &row.collision {
        write!(s, ",{}", *c as u8).unwrap();
    }
    if with_diagnostics {
        let d = row.diagnostics.unwrap_or([0.0; 4]);
        for v in d {
            write!(s, ",{v:.6}").unwrap();
        }
    }
    s
}

/// Per-scenario rows plus an aggregate row of column means.
pub fn metrics_csv(rows: &[MetricsRow], cfg: &PlanEvalConfig) -> String {
    let with_diagnostics = rows.iter().any(|r| r.diagnostics.is_some());
    let mut out = csv_header(cfg, with_diagnostics);
    out.push('\n');
    for row in rows {
        out.push_str(&row_line(row, with_diagnostics));
        out.push('\n');
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let agg = MetricsRow {
            scenario: "aggregate".into(),
            min_ade: mean(&|r| r.min_ade),
            min_fde: mean(&|r| r.min_fde),
            miss: mean(&|r| r.miss),
            l2: (0..cfg.horizons.len()).map(|i| mean(&|r| r.l2[i])).collect(),
            l2_avg: mean(&|r| r.l2_avg),
            collision: Vec::new(),
            diagnostics: if with_diagnostics {
                let mut d = [0.0; 4];
                for (i, item) in d.iter_mut().enumerate() {
                    *item = mean(&|r| r.diagnostics.unwrap_or([0.0; 4])[i]);
                }
                Some(d)
            } else {
                None
            },
        };
        // collision columns aggregate to fractions, printed as means
        let mut line = format!(
            "{},{:.6},{:.6},{:.6}",
            agg.scenario, agg.min_ade, agg.min_fde, agg.miss
        );
        for v in &agg.l2 {
            write!(line, ",{v:.6}").unwrap();
        }
        write!(line, ",{:.6}", agg.l2_avg).unwrap();
        for i in 0..cfg.horizons.len() {
            let frac = mean(&|r| r.collision[i] as u8 as f64);
            write!(line, ",{frac:.6}").unwrap();
        }
        if with_diagnostics {
            for v in agg.diagnostics.unwrap() {
                write!(line, ",{v:.6}").unwrap();
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

//! Training objectives: Hungarian assignment between ground truth and
//! predictions, focal classification losses, L1 regression losses, depth
//! loss, winner-take-all motion and planning losses, and the multi-task
//! total.

use crate::error::{require, Result};
use crate::geometry::Box3D;
use crate::numeric::{Tape, Tensor, Vid};

/// Per-task loss weights (all default to 1) plus the focal
/// hyperparameters used by the classification terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub det_c: f64,
    pub det_r: f64,
    pub map_c: f64,
    pub map_r: f64,
    pub depth: f64,
    pub motion_c: f64,
    pub motion_r: f64,
    pub plan_c: f64,
    pub plan_r: f64,
    pub plan_status: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            det_c: 1.0,
            det_r: 1.0,
            map_c: 1.0,
            map_r: 1.0,
            depth: 1.0,
            motion_c: 1.0,
            motion_r: 1.0,
            plan_c: 1.0,
            plan_r: 1.0,
            plan_status: 1.0,
            focal_alpha: FOCAL_ALPHA,
            focal_gamma: FOCAL_GAMMA,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.det_c,
            self.det_r,
            self.map_c,
            self.map_r,
            self.depth,
            self.motion_c,
            self.motion_r,
            self.plan_c,
            self.plan_r,
            self.plan_status,
        ];
        require(all.iter().all(|w| w.is_finite() && *w >= 0.0), "loss weights must be ≥ 0")?;
        require((0.0..=1.0).contains(&self.focal_alpha), "focal alpha must lie in [0,1]")?;
        require(self.focal_gamma >= 0.0, "focal gamma must be ≥ 0")
    }
}

// ── assignment ───────────────────────────────────────────────────────────

/// Minimum-cost assignment of each ground truth (row) to a distinct
/// prediction (column) by shortest augmenting paths. Requires at least as
/// many predictions as ground truths and finite costs.
pub fn hungarian_match(cost: &Tensor) -> Result<Vec<usize>> {
    require(cost.rank() == 2, "cost must be a matrix")?;
    let (n_gt, n_pred) = (cost.shape()[0], cost.shape()[1]);
    require(n_pred >= n_gt, format!("need at least as many predictions ({n_pred}) as ground truths ({n_gt})"))?;
    require(cost.all_finite(), "matching costs must be finite")?;

    // column n_pred is a virtual start; job[w] = row currently matched to w
    let mut job: Vec<Option<usize>> = vec![None; n_pred + 1];
    let mut row_pot = vec![0.0; n_gt];
    let mut col_pot = vec![0.0; n_pred + 1];

    for row in 0..n_gt {
        let mut w_cur = n_pred;
        job[w_cur] = Some(row);
        let mut min_to = vec![f64::INFINITY; n_pred + 1];
        let mut prev: Vec<Option<usize>> = vec![None; n_pred + 1];
        let mut in_tree = vec![false; n_pred + 1];

        while let Some(j) = job[w_cur] {
            in_tree[w_cur] = true;
            let mut delta = f64::INFINITY;
            let mut w_next = n_pred;
            for w in 0..n_pred {
                if in_tree[w] {
                    continue;
                }
                let reduced = cost.at2(j, w) - row_pot[j] - col_pot[w];
                if reduced < min_to[w] {
                    min_to[w] = reduced;
                    prev[w] = Some(w_cur);
                }
                if min_to[w] < delta {
                    delta = min_to[w];
                    w_next = w;
                }
            }
            for w in 0..=n_pred {
                if in_tree[w] {
                    if let Some(jw) = job[w] {
                        row_pot[jw] += delta;
                    }
                    col_pot[w] -= delta;
                } else {
                    min_to[w] -= delta;
                }
            }
            w_cur = w_next;
        }
        while w_cur != n_pred {
            let w = prev[w_cur].expect("augmenting path is connected");
            job[w_cur] = job[w];
            w_cur = w;
        }
    }

    let mut assignment = vec![usize::MAX; n_gt];
    for (w, j) in job.iter().enumerate().take(n_pred) {
        if let Some(j) = j {
            assignment[*j] = w;
        }
    }
    Ok(assignment)
}

pub fn assignment_cost(cost: &Tensor, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(j, &w)| cost.at2(j, w)).sum()
}

/// Flat (center, size, yaw) parameter vector of a box.
pub fn box_params(b: &Box3D) -> [f64; 7] {
    [b.center[0], b.center[1], b.center[2], b.size[0], b.size[1], b.size[2], b.yaw]
}

/// Matching cost between ground truths and predictions: classification
/// cost `1 − p(gt class)` plus the L1 box distance, equally weighted.
pub fn matching_cost(
    gt: &[Box3D],
    pred_boxes: &[Box3D],
    pred_class_probs: &[Vec<f64>],
) -> Result<Tensor> {
    require(pred_boxes.len() == pred_class_probs.len(), "predictions and probs must align")?;
    let (n_gt, n_pred) = (gt.len(), pred_boxes.len());
    let mut cost = vec![0.0; n_gt * n_pred];
    for (j, g) in gt.iter().enumerate() {
        let gp = box_params(g);
        for (w, p) in pred_boxes.iter().enumerate() {
            let pp = box_params(p);
            let l1: f64 =
                gp.iter().zip(&pp).map(|(a, b)| (a - b).abs()).sum::<f64>() / gp.len() as f64;
            let cls = 1.0 - pred_class_probs[w].get(g.class).copied().unwrap_or(0.0);
            cost[j * n_pred + w] = cls + l1;
        }
    }
    Tensor::new(vec![n_gt, n_pred], cost)
}

// ── classification / regression primitives ──────────────────────────────

/// Per-row focal term over `(N×K)` probabilities with one label per row:
/// `−α (1−p_y)^γ ln(p_y)`, `p_y` clamped to ≥ 1e-12. Returns `(N×1)`.
pub fn focal_loss_on(
    tape: &mut Tape,
    probs: Vid,
    labels: &[usize],
    alpha: f64,
    gamma: f64,
) -> Result<Vid> {
    require((0.0..=1.0).contains(&alpha), "focal alpha must lie in [0,1]")?;
    require(gamma >= 0.0, "focal gamma must be ≥ 0")?;
    let p_y = tape.gather_per_row(probs, labels.to_vec())?;
    let p_y = tape.max_const(p_y, 1e-12);
    let neg = tape.neg(p_y);
    let one_minus = tape.add_scalar(neg, 1.0);
    let modulator = tape.pow_const(one_minus, gamma);
    let log_p = tape.ln(p_y);
    let term = tape.mul(modulator, log_p)?;
    Ok(tape.scale(term, -alpha))
}

/// Focal loss of one probability distribution against its true class.
pub fn focal_loss(p: &Tensor, y: usize, alpha: f64, gamma: f64) -> Result<f64> {
    require(p.rank() == 1, "probabilities must be a vector")?;
    require(y < p.len(), "true class out of range")?;
    let sum: f64 = p.data().iter().sum();
    require((sum - 1.0).abs() <= 1e-6, format!("probabilities must sum to 1, got {sum}"))?;
    require(p.data().iter().all(|&v| v >= 0.0), "probabilities must be nonnegative")?;
    let mut tape = Tape::new();
    let row = Tensor::new(vec![1, p.len()], p.data().to_vec())?;
    let pid = tape.constant(&row);
    let loss = focal_loss_on(&mut tape, pid, &[y], alpha, gamma)?;
    Ok(tape.value(loss)[0])
}

/// Mean absolute difference between two equal-length parameter vectors.
pub fn l1_box_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    require(pred.len() == gt.len(), "parameter vectors must have equal length")?;
    require(!pred.is_empty(), "parameter vectors must be nonempty")?;
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

/// Rowwise mean absolute difference on the tape: `(N×D)` vs constant
/// target rows → `(N×1)`.
pub fn l1_rows_on(tape: &mut Tape, pred: Vid, target: &Tensor) -> Result<Vid> {
    require(
        tape.shape(pred) == target.shape(),
        format!("l1 target shape {:?} vs pred {:?}", target.shape(), tape.shape(pred)),
    )?;
    let d = target.shape()[1];
    let t = tape.constant(target);
    let diff = tape.sub(pred, t)?;
    let diff = tape.abs(diff);
    let ones = Tensor::new(vec![d, 1], vec![1.0 / d as f64; d])?;
    let ones = tape.constant(&ones);
    tape.matmul(diff, ones)
}

/// `λ_depth · mean |d_pred − d_gt|` over instances.
pub fn depth_loss_on(tape: &mut Tape, d_pred: Vid, d_gt: &Tensor, lambda: f64) -> Result<Vid> {
    let gt = tape.constant(d_gt);
    let diff = tape.sub(d_pred, gt)?;
    let diff = tape.abs(diff);
    let mean = tape.mean(diff);
    Ok(tape.scale(mean, lambda))
}

pub fn depth_loss(d_pred: &[f64], d_gt: &[f64], lambda: f64) -> Result<f64> {
    require(d_pred.len() == d_gt.len() && !d_pred.is_empty(), "depth vectors must align")?;
    let mean =
        d_pred.iter().zip(d_gt).map(|(a, b)| (a - b).abs()).sum::<f64>() / d_pred.len() as f64;
    Ok(lambda * mean)
}

// ── trajectory losses ────────────────────────────────────────────────────

/// Index of the mode with the lowest average L2 displacement to the
/// ground truth (ties resolve to the lowest index).
pub fn min_ade_mode(modes: &[Vec<[f64; 2]>], gt: &[[f64; 2]]) -> Result<(usize, f64)> {
    require(!modes.is_empty(), "need at least one mode")?;
    let mut best = (0usize, f64::INFINITY);
    for (m, mode) in modes.iter().enumerate() {
        require(mode.len() == gt.len(), "mode horizon does not match ground truth")?;
        let ade = mode
            .iter()
            .zip(gt)
            .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt())
            .sum::<f64>()
            / gt.len() as f64;
        if ade < best.1 {
            best = (m, ade);
        }
    }
    Ok(best)
}

/// Focal classification hyperparameters for the trajectory losses.
pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

/// Winner-take-all trajectory loss: L1 regression on the min-ADE mode plus
/// focal classification with that mode as the positive class.
///
/// `modes` is `(M × 2T)` on the tape (x,y interleaved per step), `logits`
/// is `(1×M)`. Returns the scalar loss node and the winning mode.
pub fn motion_loss_on(
    tape: &mut Tape,
    modes: Vid,
    logits: Vid,
    gt: &[[f64; 2]],
    lambda_c: f64,
    lambda_r: f64,
    focal_alpha: f64,
    focal_gamma: f64,
) -> Result<(Vid, usize)> {
    let m = tape.shape(modes)[0];
    require(tape.shape(modes)[1] == gt.len() * 2, "mode horizon does not match ground truth")?;
    require(tape.shape(logits) == [1, m], "logits must be (1×M)")?;
    let mode_vals: Vec<Vec<[f64; 2]>> = (0..m)
        .map(|i| {
            tape.value(modes)[i * gt.len() * 2..(i + 1) * gt.len() * 2]
                .chunks(2)
                .map(|c| [c[0], c[1]])
                .collect()
        })
        .collect();
    let (winner, _) = min_ade_mode(&mode_vals, gt)?;

    let winner_row = tape.slice_rows(modes, winner, winner + 1)?;
    let flat: Vec<f64> = gt.iter().flatten().copied().collect();
    let target = Tensor::new(vec![1, gt.len() * 2], flat)?;
    let reg = l1_rows_on(tape, winner_row, &target)?;
    let reg = tape.mean(reg);
    let reg = tape.scale(reg, lambda_r);

    let probs = tape.softmax(logits, 1)?;
    let cls = focal_loss_on(tape, probs, &[winner], focal_alpha, focal_gamma)?;
    let cls = tape.mean(cls);
    let cls = tape.scale(cls, lambda_c);

    let total = tape.add(reg, cls)?;
    Ok((total, winner))
}

/// Planning loss: the motion structure on ego modes plus L1 on the ego
/// status vector (speed, yaw rate).
#[allow(clippy::too_many_arguments)]
pub fn planning_loss_on(
    tape: &mut Tape,
    ego_modes: Vid,
    ego_logits: Vid,
    gt_traj: &[[f64; 2]],
    status_pred: Vid,
    status_gt: [f64; 2],
    w: &LossWeights,
) -> Result<(Vid, usize)> {
    let (motion, winner) = motion_loss_on(
        tape,
        ego_modes,
        ego_logits,
        gt_traj,
        w.plan_c,
        w.plan_r,
        w.focal_alpha,
        w.focal_gamma,
    )?;
    let target = Tensor::new(vec![1, 2], status_gt.to_vec())?;
    let status = l1_rows_on(tape, status_pred, &target)?;
    let status = tape.mean(status);
    let status = tape.scale(status, w.plan_status);
    let total = tape.add(motion, status)?;
    Ok((total, winner))
}

/// Plain sum of the per-task losses (each already internally weighted).
pub fn total_loss_on(tape: &mut Tape, components: &[Vid]) -> Result<Vid> {
    require(!components.is_empty(), "total loss needs at least one component")?;
    let mut acc = components[0];
    for &c in &components[1..] {
        acc = tape.add(acc, c)?;
    }
    Ok(acc)
}

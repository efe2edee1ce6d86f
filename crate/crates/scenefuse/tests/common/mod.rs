//! Shared brute-force oracles for the integration and acceptance suites.
//! Each oracle stays independent of the implementation path it checks.

use scenefuse::geometry::OrientedBox2D;
use scenefuse::numeric::Tensor;

/// Dense-sampling intersection oracle: a grid of points over box `a`
/// tested for containment in box `b`. `samples_per_axis²` points total.
pub fn dense_boxes_intersect(a: &OrientedBox2D, b: &OrientedBox2D, samples_per_axis: usize) -> bool {
    // quick reject: bounding circles (triangle inequality, no box math)
    let ra = (a.half_extents[0].powi(2) + a.half_extents[1].powi(2)).sqrt();
    let rb = (b.half_extents[0].powi(2) + b.half_extents[1].powi(2)).sqrt();
    let d = ((a.center[0] - b.center[0]).powi(2) + (a.center[1] - b.center[1]).powi(2)).sqrt();
    if d > ra + rb {
        return false;
    }
    let (s, c) = a.yaw.sin_cos();
    let n = samples_per_axis;
    for i in 0..n {
        let fx = -a.half_extents[0] + 2.0 * a.half_extents[0] * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let fy = -a.half_extents[1] + 2.0 * a.half_extents[1] * j as f64 / (n - 1) as f64;
            let p = [a.center[0] + c * fx - s * fy, a.center[1] + s * fx + c * fy];
            if point_in_obb(p, b) {
                return true;
            }
        }
    }
    false
}

fn point_in_obb(p: [f64; 2], b: &OrientedBox2D) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let dx = p[0] - b.center[0];
    let dy = p[1] - b.center[1];
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    lx.abs() <= b.half_extents[0] && ly.abs() <= b.half_extents[1]
}

/// Exhaustive minimum assignment cost over all column permutations.
pub fn brute_force_min_assignment(cost: &Tensor) -> f64 {
    let rows = cost.shape()[0];
    let cols = cost.shape()[1];
    let mut order: Vec<usize> = (0..cols).collect();
    let mut best = f64::INFINITY;
    fn rec(order: &mut Vec<usize>, k: usize, rows: usize, cost: &Tensor, best: &mut f64) {
        if k == rows {
            let total: f64 = (0..rows).map(|j| cost.at2(j, order[j])).sum();
            if total < *best {
                *best = total;
            }
            return;
        }
        for i in k..order.len() {
            order.swap(k, i);
            rec(order, k + 1, rows, cost, best);
            order.swap(k, i);
        }
    }
    rec(&mut order, 0, rows, cost, &mut best);
    best
}

/// Guarded relative error for gradient comparisons.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

//! Projective camera model, bilinear image sampling, oriented 2D boxes with
//! exact separating-axis intersection tests, and yaw estimation from
//! trajectory points.
//!
//! Coordinate conventions, pinned by tests:
//! - World/BEV frame: x forward, y left, z up (meters).
//! - Image frame: u rightward, v downward, pixel centers at integer
//!   coordinates. A camera with yaw 0 looks along +x; a point to its left
//!   (+y) projects to a smaller u.

use crate::error::{require, Result};
use crate::numeric::Tensor;

/// Pinhole camera: intrinsics, rigid world→camera transform, image extents.
#[derive(Debug, Clone)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rows are the camera axes (right, down, forward) in world coordinates.
    pub rotation: [[f64; 3]; 3],
    /// world→camera translation: p_cam = R·p_world + t.
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `position` with heading `yaw` (radians, world frame),
    /// looking horizontally.
    pub fn looking(
        position: [f64; 3],
        yaw: f64,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Camera {
        let (s, c) = yaw.sin_cos();
        let right = [s, -c, 0.0];
        let down = [0.0, 0.0, -1.0];
        let forward = [c, s, 0.0];
        let rotation = [right, down, forward];
        let mut translation = [0.0; 3];
        for (i, row) in rotation.iter().enumerate() {
            translation[i] = -(row[0] * position[0] + row[1] * position[1] + row[2] * position[2]);
        }
        Camera { fx, fy, cx, cy, rotation, translation, width, height }
    }

    pub fn camera_frame(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.rotation[i][0] * p[0]
                + self.rotation[i][1] * p[1]
                + self.rotation[i][2] * p[2]
                + self.translation[i];
        }
        out
    }

    /// Rotation is orthonormal with determinant +1 (within 1e-9).
    pub fn rotation_is_valid(&self) -> bool {
        let r = &self.rotation;
        let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let mut ok = true;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                ok &= (dot(&r[i], &r[j]) - expect).abs() < 1e-9;
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        ok && (det - 1.0).abs() < 1e-9
    }
}

/// Pinhole projection result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub visible: bool,
}

/// Projects a world point; `visible` means positive depth and the pixel
/// lies within `[0,width) × [0,height)`. Invisibility is data, not an error.
pub fn project(cam: &Camera, p_world: [f64; 3]) -> Projection {
    let pc = cam.camera_frame(p_world);
    let depth = pc[2];
    if depth <= 1e-12 {
        return Projection { u: 0.0, v: 0.0, depth, visible: false };
    }
    let u = cam.cx + cam.fx * pc[0] / depth;
    let v = cam.cy + cam.fy * pc[1] / depth;
    let visible = u >= 0.0 && u < cam.width as f64 && v >= 0.0 && v < cam.height as f64;
    Projection { u, v, depth, visible }
}

/// Inverse of [`project`] at a given depth (camera-frame forward distance).
pub fn unproject(cam: &Camera, u: f64, v: f64, depth: f64) -> [f64; 3] {
    let pc = [(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth];
    // p_world = Rᵀ (p_cam − t)
    let q = [pc[0] - cam.translation[0], pc[1] - cam.translation[1], pc[2] - cam.translation[2]];
    let r = &cam.rotation;
    [
        r[0][0] * q[0] + r[1][0] * q[1] + r[2][0] * q[2],
        r[0][1] * q[0] + r[1][1] * q[1] + r[2][1] * q[2],
        r[0][2] * q[0] + r[1][2] * q[1] + r[2][2] * q[2],
    ]
}

/// Standard 4-neighbor bilinear blend over a `(C,H,W)` map; coordinates
/// outside `[0,W−1]×[0,H−1]` return the zero vector.
pub fn bilinear_sample(map: &Tensor, u: f64, v: f64) -> Vec<f64> {
    let mut out = vec![0.0; map.shape()[0]];
    crate::numeric::bilinear_at(map, u, v, &mut out);
    out
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * std::f64::consts::PI);
    if a <= -std::f64::consts::PI {
        a += 2.0 * std::f64::consts::PI;
    } else if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    }
    a
}

/// Oriented rectangle in the BEV plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox2D {
    pub center: [f64; 2],
    pub half_extents: [f64; 2],
    pub yaw: f64,
}

impl OrientedBox2D {
    pub fn new(center: [f64; 2], half_extents: [f64; 2], yaw: f64) -> OrientedBox2D {
        OrientedBox2D { center, half_extents, yaw: normalize_angle(yaw) }
    }

    pub fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.yaw.sin_cos();
        [[c, s], [-s, c]]
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [ax, ay] = self.axes();
        let [hx, hy] = self.half_extents;
        let mut out = [[0.0; 2]; 4];
        for (k, (sx, sy)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)].iter().enumerate()
        {
            out[k] = [
                self.center[0] + sx * hx * ax[0] + sy * hy * ay[0],
                self.center[1] + sx * hx * ax[1] + sy * hy * ay[1],
            ];
        }
        out
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [ax, ay] = self.axes();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let px = d[0] * ax[0] + d[1] * ax[1];
        let py = d[0] * ay[0] + d[1] * ay[1];
        px.abs() <= self.half_extents[0] && py.abs() <= self.half_extents[1]
    }
}

/// Exact separating-axis test over the 4 candidate axes of two oriented
/// rectangles; touching edges count as intersecting.
pub fn boxes_intersect(a: &OrientedBox2D, b: &OrientedBox2D) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let axes = [a.axes()[0], a.axes()[1], b.axes()[0], b.axes()[1]];
    for axis in axes {
        let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in ca {
            let d = p[0] * axis[0] + p[1] * axis[1];
            amin = amin.min(d);
            amax = amax.max(d);
        }
        let (mut bmin, mut bmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in cb {
            let d = p[0] * axis[0] + p[1] * axis[1];
            bmin = bmin.min(d);
            bmax = bmax.max(d);
        }
        if amax < bmin || bmax < amin {
            return false;
        }
    }
    true
}

/// Signed separation estimate: positive = gap between the boxes, negative =
/// penetration depth (least interval overlap across the SAT axes).
pub fn boxes_gap(a: &OrientedBox2D, b: &OrientedBox2D) -> f64 {
    if boxes_intersect(a, b) {
        let ca = a.corners();
        let cb = b.corners();
        let axes = [a.axes()[0], a.axes()[1], b.axes()[0], b.axes()[1]];
        let mut depth = f64::INFINITY;
        for axis in axes {
            let proj = |pts: &[[f64; 2]; 4]| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for p in pts {
                    let d = p[0] * axis[0] + p[1] * axis[1];
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
                (lo, hi)
            };
            let (alo, ahi) = proj(&ca);
            let (blo, bhi) = proj(&cb);
            depth = depth.min((ahi - blo).min(bhi - alo));
        }
        -depth
    } else {
        obb_clearance(a, b)
    }
}

/// Euclidean clearance between two non-intersecting oriented boxes.
pub fn obb_clearance(a: &OrientedBox2D, b: &OrientedBox2D) -> f64 {
    let ca = a.corners();
    let cb = b.corners();
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let s1 = (ca[i], ca[(i + 1) % 4]);
        for j in 0..4 {
            let s2 = (cb[j], cb[(j + 1) % 4]);
            best = best.min(segment_distance(s1.0, s1.1, s2.0, s2.1));
        }
    }
    best
}

fn segment_distance(a0: [f64; 2], a1: [f64; 2], b0: [f64; 2], b1: [f64; 2]) -> f64 {
    if segments_cross(a0, a1, b0, b1) {
        return 0.0;
    }
    point_segment_distance(a0, b0, b1)
        .min(point_segment_distance(a1, b0, b1))
        .min(point_segment_distance(b0, a0, a1))
        .min(point_segment_distance(b1, a0, a1))
}

fn segments_cross(a0: [f64; 2], a1: [f64; 2], b0: [f64; 2], b1: [f64; 2]) -> bool {
    let cross = |o: [f64; 2], p: [f64; 2], q: [f64; 2]| {
        (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])
    };
    let d0 = cross(b0, b1, a0);
    let d1 = cross(b0, b1, a1);
    let d2 = cross(a0, a1, b0);
    let d3 = cross(a0, a1, b1);
    (d0 * d1 < 0.0) && (d2 * d3 < 0.0)
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// 3D detection box: center, size (length, width, height), yaw, class, score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub class: usize,
    pub score: f64,
}

impl Box3D {
    pub fn footprint(&self) -> OrientedBox2D {
        OrientedBox2D::new(
            [self.center[0], self.center[1]],
            [self.size[0] / 2.0, self.size[1] / 2.0],
            self.yaw,
        )
    }

    pub fn is_valid(&self) -> bool {
        self.size.iter().all(|&s| s > 0.0) && (0.0..=1.0).contains(&self.score)
    }
}

/// Heading at `index`: atan2 of the displacement to the next point (the last
/// point reuses the previous displacement). Degenerate displacements
/// (norm < 1e-6 m) fall back to the nearest preceding valid heading, else 0.
pub fn yaw_from_trajectory(points: &[[f64; 2]], index: usize) -> Result<f64> {
    require(!points.is_empty(), "yaw_from_trajectory needs at least one point")?;
    require(index < points.len(), "yaw_from_trajectory index out of range")?;
    let n = points.len();
    if n == 1 {
        return Ok(0.0);
    }
    let disp = |i: usize| {
        let d = [points[i + 1][0] - points[i][0], points[i + 1][1] - points[i][1]];
        (d, (d[0] * d[0] + d[1] * d[1]).sqrt())
    };
    // displacement index relevant at `index`
    let start = if index == n - 1 { index - 1 } else { index };
    let mut i = start as isize;
    while i >= 0 {
        let (d, norm) = disp(i as usize);
        if norm >= 1e-6 {
            return Ok(d[1].atan2(d[0]));
        }
        i -= 1;
    }
    Ok(0.0)
}

/// Ray-casting point-in-polygon test; boundary points count as inside.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    if poly.len() < 3 {
        return false;
    }
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        if point_segment_distance(p, a, b) < 1e-12 {
            return true;
        }
    }
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi[1] > p[1]) != (pj[1] > p[1]) {
            let x = pi[0] + (p[1] - pi[1]) / (pj[1] - pi[1]) * (pj[0] - pi[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn point_in_any_polygon(p: [f64; 2], polys: &[Vec<[f64; 2]>]) -> bool {
    polys.iter().any(|poly| point_in_polygon(p, poly))
}

/// Coverage test used for drivable-area checks: corners, edge midpoints and
/// the center of the footprint must all lie inside the polygon union. An
/// empty polygon list means no constraint.
pub fn box_inside_polygons(b: &OrientedBox2D, polys: &[Vec<[f64; 2]>]) -> bool {
    if polys.is_empty() {
        return true;
    }
    let c = b.corners();
    let mut samples: Vec<[f64; 2]> = c.to_vec();
    for i in 0..4 {
        let d = c[(i + 1) % 4];
        samples.push([(c[i][0] + d[0]) / 2.0, (c[i][1] + d[1]) / 2.0]);
    }
    samples.push(b.center);
    samples.iter().all(|&p| point_in_any_polygon(p, polys))
}

/// Rigid transform of subject-frame points into the world frame.
pub fn to_world(points: &[[f64; 2]], pose: ([f64; 2], f64)) -> Vec<[f64; 2]> {
    let ((px, py), yaw) = ((pose.0[0], pose.0[1]), pose.1);
    let (s, c) = yaw.sin_cos();
    points.iter().map(|p| [px + c * p[0] - s * p[1], py + s * p[0] + c * p[1]]).collect()
}

/// Inverse of [`to_world`]: world points expressed in the subject frame.
pub fn to_subject(points: &[[f64; 2]], pose: ([f64; 2], f64)) -> Vec<[f64; 2]> {
    let ((px, py), yaw) = ((pose.0[0], pose.0[1]), pose.1);
    let (s, c) = yaw.sin_cos();
    points
        .iter()
        .map(|p| {
            let d = [p[0] - px, p[1] - py];
            [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
        })
        .collect()
}

//! Sparse query-based 3D instance initialization: learnable queries sample
//! multi-view features at their projected positions, the aggregated feature
//! is fused with the query embedding, and a proposal head predicts score,
//! box and class. Proposals above the score threshold become instances.
//!
//! All positions here live in the current ego frame; cameras are built at
//! the ego-frame origin.

use std::rc::Rc;

use rand::Rng;

use crate::error::{require, Result};
use crate::geometry::{Box3D, Camera};
use crate::numeric::{Mlp, Tape, Tensor, Vid};
use crate::simulator::AgentClass;

/// Learnable 3D queries: embedding, position and size per query.
#[derive(Debug, Clone)]
pub struct QuerySet {
    pub embeddings: Tensor,
    pub positions: Tensor,
    pub sizes: Tensor,
}

impl QuerySet {
    /// Queries on a uniform 3D grid over the scene volume (x,y ∈ ±half_xy,
    /// z ∈ ±half_z), embeddings randomly initialized.
    pub fn grid<R: Rng>(
        nx: usize,
        ny: usize,
        nz: usize,
        half_xy: f64,
        half_z: f64,
        d: usize,
        rng: &mut R,
    ) -> Result<QuerySet> {
        require(nx * ny * nz > 0, "query grid must be non-empty")?;
        let n = nx * ny * nz;
        let mut positions = Vec::with_capacity(n * 3);
        let centers = |count: usize, half: f64| -> Vec<f64> {
            (0..count).map(|i| -half + (2.0 * half) * (i as f64 + 0.5) / count as f64).collect()
        };
        let (xs, ys, zs) = (centers(nx, half_xy), centers(ny, half_xy), centers(nz, half_z));
        for &x in &xs {
            for &y in &ys {
                for &z in &zs {
                    positions.extend_from_slice(&[x, y, z]);
                }
            }
        }
        Ok(QuerySet {
            embeddings: Tensor::uniform(rng, vec![n, d], -0.5, 0.5).tracked(),
            positions: Tensor::new(vec![n, 3], positions)?.tracked(),
            sizes: Tensor::new(vec![n, 3], vec![2.0; n * 3])?.tracked(),
        })
    }

    pub fn count(&self) -> usize {
        self.embeddings.shape()[0]
    }

    pub fn embed_width(&self) -> usize {
        self.embeddings.shape()[1]
    }
}

/// One frame of camera views with rendered feature and depth maps.
#[derive(Clone)]
pub struct RigFrame {
    pub cameras: Vec<Camera>,
    pub features: Vec<Rc<Tensor>>,
    pub depths: Vec<Rc<Tensor>>,
}

impl RigFrame {
    pub fn views(&self) -> usize {
        self.cameras.len()
    }

    pub fn channels(&self) -> usize {
        self.features[0].shape()[0]
    }
}

/// Tracked pinhole projection of `(N×3)` positions through one camera.
/// Returns masked pixel coordinates (invisible rows pushed off-image so
/// sampling yields zero), the camera-frame depth column, and visibility.
pub fn project_on_tape(
    tape: &mut Tape,
    positions: Vid,
    cam: &Camera,
) -> Result<(Vid, Vid, Vec<bool>)> {
    let n = tape.shape(positions)[0];
    // p_cam = p_world · Rᵀ + t, rows as points
    let mut rt = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            rt.push(cam.rotation[j][i]);
        }
    }
    let rt = Tensor::new(vec![3, 3], rt)?;
    let t = Tensor::new(vec![3], cam.translation.to_vec())?;
    let rt_id = tape.constant(&rt);
    let t_id = tape.constant(&t);
    let pc = tape.matmul(positions, rt_id)?;
    let pc = tape.add_row(pc, t_id)?;
    let x = tape.slice_cols(pc, 0, 1)?;
    let y = tape.slice_cols(pc, 1, 2)?;
    let depth = tape.slice_cols(pc, 2, 3)?;
    let inv = tape.visible_recip(depth);
    let xi = tape.mul(x, inv)?;
    let yi = tape.mul(y, inv)?;
    let u = tape.scale(xi, cam.fx);
    let u = tape.add_scalar(u, cam.cx);
    let v = tape.scale(yi, cam.fy);
    let v = tape.add_scalar(v, cam.cy);
    let coords = tape.concat(u, v, 1)?;

    let mut visible = Vec::with_capacity(n);
    for i in 0..n {
        let z = tape.value(depth)[i];
        let uu = tape.value(coords)[i * 2];
        let vv = tape.value(coords)[i * 2 + 1];
        visible.push(
            z > 1e-9 && uu >= 0.0 && uu < cam.width as f64 && vv >= 0.0 && vv < cam.height as f64,
        );
    }
    let coords = tape.mask_rows_fill(coords, visible.clone(), -1e6)?;
    Ok((coords, depth, visible))
}

/// Per-view bilinear samples at the projected query positions.
pub struct MultiViewSamples {
    /// One `(N×C)` node per view.
    pub per_view: Vec<Vid>,
    /// `mask[m][i]`: query `i` visible in view `m`.
    pub mask: Vec<Vec<bool>>,
}

/// Projects every query into every view and samples features bilinearly;
/// invisible views contribute zero rows.
pub fn sample_multiview_on(
    tape: &mut Tape,
    positions: Vid,
    rig: &RigFrame,
) -> Result<MultiViewSamples> {
    require(!rig.cameras.is_empty(), "sample_multiview needs at least one view")?;
    let mut per_view = Vec::with_capacity(rig.views());
    let mut mask = Vec::with_capacity(rig.views());
    for m in 0..rig.views() {
        let (coords, _, visible) = project_on_tape(tape, positions, &rig.cameras[m])?;
        let sampled = tape.bilinear_sample(rig.features[m].clone(), coords)?;
        let sampled = tape.mask_rows_fill(sampled, visible.clone(), 0.0)?;
        per_view.push(sampled);
        mask.push(visible);
    }
    Ok(MultiViewSamples { per_view, mask })
}

/// Pure wrapper over [`sample_multiview_on`]: `(N×M×C)` samples plus mask.
pub fn sample_multiview(queries: &QuerySet, rig: &RigFrame) -> Result<(Tensor, Vec<Vec<bool>>)> {
    let mut tape = Tape::new();
    let pos = tape.constant(&queries.positions);
    let samples = sample_multiview_on(&mut tape, pos, rig)?;
    let (n, c) = (queries.count(), rig.channels());
    let m = rig.views();
    let mut data = vec![0.0; n * m * c];
    for (vi, &view) in samples.per_view.iter().enumerate() {
        let vals = tape.value(view);
        for i in 0..n {
            data[i * m * c + vi * c..i * m * c + vi * c + c]
                .copy_from_slice(&vals[i * c..(i + 1) * c]);
        }
    }
    Ok((Tensor::new(vec![n, m, c], data)?, samples.mask))
}

/// Visibility-masked mean over views; a query invisible everywhere gets a
/// zero vector.
pub fn aggregate_views_on(tape: &mut Tape, samples: &MultiViewSamples) -> Result<Vid> {
    let views = samples.per_view.len();
    require(views > 0, "aggregate_views needs at least one view")?;
    let n = tape.shape(samples.per_view[0])[0];
    let mut acc = samples.per_view[0];
    for &view in &samples.per_view[1..] {
        acc = tape.add(acc, view)?;
    }
    let mut inv_counts = Vec::with_capacity(n);
    for i in 0..n {
        let count = (0..views).filter(|&m| samples.mask[m][i]).count();
        inv_counts.push(if count > 0 { 1.0 / count as f64 } else { 0.0 });
    }
    let inv = Tensor::new(vec![n, 1], inv_counts)?;
    let inv_id = tape.constant(&inv);
    tape.mul_col_broadcast(acc, inv_id)
}

/// Pure wrapper: masked mean over the view axis of `(N×M×C)` samples.
pub fn aggregate_views(samples: &Tensor, mask: &[Vec<bool>]) -> Result<Tensor> {
    require(samples.rank() == 3, "aggregate_views expects (N×M×C) samples")?;
    let (n, m, c) = (samples.shape()[0], samples.shape()[1], samples.shape()[2]);
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        let visible: Vec<usize> = (0..m).filter(|&vi| mask[vi][i]).collect();
        if visible.is_empty() {
            continue;
        }
        for ch in 0..c {
            let mut s = 0.0;
            for &vi in &visible {
                s += samples.data()[i * m * c + vi * c + ch];
            }
            out[i * c + ch] = s / visible.len() as f64;
        }
    }
    Tensor::new(vec![n, c], out)
}

/// Rowwise concatenation `[f ∥ q]`.
pub fn fuse_query_on(tape: &mut Tape, f: Vid, q: Vid) -> Result<Vid> {
    tape.concat(f, q, 1)
}

/// Decoded proposal head outputs, still attached to the tape.
pub struct Proposals {
    /// `(N×1)` sigmoid scores.
    pub scores: Vid,
    /// `(N×3)` centers: query position + predicted residual.
    pub positions: Vid,
    /// `(N×3)` sizes: class prior × exp(raw).
    pub sizes: Vid,
    /// `(N×1)` raw yaw.
    pub yaws: Vid,
    /// `(N×K)` class logits.
    pub class_logits: Vid,
    /// Argmax class per query.
    pub classes: Vec<usize>,
}

impl Proposals {
    pub fn count(&self, tape: &Tape) -> usize {
        tape.shape(self.scores)[0]
    }

    /// Plain-value snapshot of the proposal boxes.
    pub fn boxes(&self, tape: &Tape) -> Vec<Box3D> {
        let n = self.count(tape);
        (0..n)
            .map(|i| Box3D {
                center: [
                    tape.value(self.positions)[i * 3],
                    tape.value(self.positions)[i * 3 + 1],
                    tape.value(self.positions)[i * 3 + 2],
                ],
                size: [
                    tape.value(self.sizes)[i * 3],
                    tape.value(self.sizes)[i * 3 + 1],
                    tape.value(self.sizes)[i * 3 + 2],
                ],
                yaw: crate::geometry::normalize_angle(tape.value(self.yaws)[i]),
                class: self.classes[i],
                score: tape.value(self.scores)[i],
            })
            .collect()
    }
}

/// Head width for `num_classes`: score, position residual, size residual,
/// yaw, class logits.
pub fn pph_output_width(num_classes: usize) -> usize {
    1 + 3 + 3 + 1 + num_classes
}

/// Residual decoding scales: raw head outputs are O(1), so positions and
/// yaw are decoded with these gains to span the scene quickly.
pub const POSITION_RESIDUAL_SCALE: f64 = 10.0;
pub const YAW_SCALE: f64 = 2.0;

/// Applies the proposal prediction head to instance features: score via
/// sigmoid, position as residual from the query anchor, size as
/// exp-scaled class prior, class via logit argmax.
pub fn propose_on(
    tape: &mut Tape,
    pph: &Mlp,
    pph_bound: &[(Vid, Vid)],
    features: Vid,
    query_positions: Vid,
    num_classes: usize,
) -> Result<Proposals> {
    require(
        pph.output_width() == pph_output_width(num_classes),
        format!(
            "proposal head width {} does not match expected {}",
            pph.output_width(),
            pph_output_width(num_classes)
        ),
    )?;
    let raw = pph.forward_on(tape, features, pph_bound)?;
    let score_raw = tape.slice_cols(raw, 0, 1)?;
    let scores = tape.sigmoid(score_raw);
    let pos_residual = tape.slice_cols(raw, 1, 4)?;
    let pos_residual = tape.scale(pos_residual, POSITION_RESIDUAL_SCALE);
    let positions = tape.add(query_positions, pos_residual)?;
    let size_raw = tape.slice_cols(raw, 4, 7)?;
    let size_exp = tape.exp(size_raw);
    let yaws = tape.slice_cols(raw, 7, 8)?;
    let yaws = tape.scale(yaws, YAW_SCALE);
    let class_logits = tape.slice_cols(raw, 8, 8 + num_classes)?;

    let n = tape.shape(raw)[0];
    let logits = tape.value(class_logits).to_vec();
    // argmax; ties resolve to the lowest class index
    let classes: Vec<usize> = (0..n)
        .map(|i| {
            let row = &logits[i * num_classes..(i + 1) * num_classes];
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();

    let mut priors = Vec::with_capacity(n * 3);
    for &k in &classes {
        priors.extend_from_slice(&AgentClass::from_index(k.min(AgentClass::COUNT - 1))?.prior_size());
    }
    let prior = Tensor::new(vec![n, 3], priors)?;
    let prior_id = tape.constant(&prior);
    let sizes = tape.mul(size_exp, prior_id)?;

    Ok(Proposals { scores, positions, sizes, yaws, class_logits, classes })
}

/// One retained object hypothesis.
#[derive(Debug, Clone)]
pub struct Instance3D {
    pub feature: Tensor,
    pub box3d: Box3D,
    /// Per-timestep past features, newest first, bounded by the configured
    /// horizon.
    pub history: Vec<Tensor>,
}

/// Strict score filter: proposals with `score > τ` become instances with
/// empty history; ordering is preserved.
pub fn threshold(boxes: &[Box3D], features: &[Tensor], tau: f64) -> Result<Vec<Instance3D>> {
    require((0.0..=1.0).contains(&tau), "threshold must lie in [0,1]")?;
    require(boxes.len() == features.len(), "boxes and features must align")?;
    Ok(boxes
        .iter()
        .zip(features)
        .filter(|(b, _)| b.score > tau)
        .map(|(b, f)| Instance3D { feature: f.clone(), box3d: *b, history: Vec::new() })
        .collect())
}

/// Indices retained by the strict threshold rule.
pub fn threshold_indices(scores: &[f64], tau: f64) -> Vec<usize> {
    scores.iter().enumerate().filter(|(_, &s)| s > tau).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{bilinear_sample, project, unproject};
    use crate::numeric::{finite_difference_grad, Activation, Init};
    use approx::assert_abs_diff_eq;

    fn toy_rig(maps: Vec<Tensor>) -> RigFrame {
        let cams: Vec<Camera> = (0..maps.len())
            .map(|i| {
                Camera::looking(
                    [0.0, 0.0, 0.0],
                    i as f64 * 0.5,
                    8.0,
                    8.0,
                    8.0,
                    8.0,
                    16,
                    16,
                )
            })
            .collect();
        let depths = maps
            .iter()
            .map(|m| Rc::new(Tensor::ones(vec![m.shape()[1], m.shape()[2]])))
            .collect();
        RigFrame { cameras: cams, features: maps.into_iter().map(Rc::new).collect(), depths }
    }

    fn queries_at(positions: Vec<[f64; 3]>, d: usize) -> QuerySet {
        let n = positions.len();
        let flat: Vec<f64> = positions.iter().flatten().copied().collect();
        QuerySet {
            embeddings: Tensor::zeros(vec![n, d]).tracked(),
            positions: Tensor::new(vec![n, 3], flat).unwrap().tracked(),
            sizes: Tensor::new(vec![n, 3], vec![2.0; n * 3]).unwrap().tracked(),
        }
    }

    #[test]
    fn grid_queries_stay_inside_volume() {
        let mut rng = crate::rng(0);
        let q = QuerySet::grid(4, 4, 2, 50.0, 3.0, 8, &mut rng).unwrap();
        assert_eq!(q.count(), 32);
        for i in 0..q.count() {
            let p = &q.positions.data()[i * 3..(i + 1) * 3];
            assert!(p[0].abs() <= 50.0 && p[1].abs() <= 50.0 && p[2].abs() <= 3.0);
        }
    }

    #[test]
    fn sampling_at_landmark_pixel_returns_that_pixel() {
        // landmark feature at integer pixel (10, 6) in a 2-channel map
        let mut map = Tensor::zeros(vec![2, 16, 16]);
        let idx0 = 6 * 16 + 10;
        let mut data = map.data().to_vec();
        data[idx0] = 3.5;
        data[16 * 16 + idx0] = -1.25;
        map = Tensor::new(vec![2, 16, 16], data).unwrap();
        let rig = toy_rig(vec![map]);
        // world point that projects exactly to (10, 6)
        let world = unproject(&rig.cameras[0], 10.0, 6.0, 5.0);
        let q = queries_at(vec![world], 4);
        let (samples, mask) = sample_multiview(&q, &rig).unwrap();
        assert!(mask[0][0]);
        assert_abs_diff_eq!(samples.data()[0], 3.5, epsilon = 1e-9);
        assert_abs_diff_eq!(samples.data()[1], -1.25, epsilon = 1e-9);
    }

    #[test]
    fn query_behind_all_cameras_is_masked_to_zero() {
        let rig = toy_rig(vec![Tensor::ones(vec![2, 16, 16])]);
        let q = queries_at(vec![[-10.0, 0.0, 0.0]], 4);
        let (samples, mask) = sample_multiview(&q, &rig).unwrap();
        assert!(!mask[0][0]);
        assert!(samples.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_view_samples_match_independent_bilinear_calls() {
        let mut rng = crate::rng(5);
        let maps: Vec<Tensor> =
            (0..2).map(|_| Tensor::uniform(&mut rng, vec![3, 16, 16], 0.0, 1.0)).collect();
        let rig = toy_rig(maps.clone());
        let world = [6.0, 1.0, 0.5];
        let q = queries_at(vec![world], 4);
        let (samples, mask) = sample_multiview(&q, &rig).unwrap();
        for m in 0..2 {
            let pr = project(&rig.cameras[m], world);
            assert!(pr.visible && mask[m][0]);
            let expect = bilinear_sample(&maps[m], pr.u, pr.v);
            for c in 0..3 {
                assert_abs_diff_eq!(samples.data()[m * 3 + c], expect[c], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn aggregation_is_masked_mean() {
        // single visible view → that vector
        let s = Tensor::new(vec![1, 1, 2], vec![4.0, 6.0]).unwrap();
        let out = aggregate_views(&s, &[vec![true]]).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0]);

        // two visible views → mean
        let s = Tensor::new(vec![1, 2, 2], vec![4.0, 6.0, 2.0, 0.0]).unwrap();
        let out = aggregate_views(&s, &[vec![true], vec![true]]).unwrap();
        assert_eq!(out.data(), &[3.0, 3.0]);

        // 3 views, 1 invisible → mean of the 2 visible
        let s = Tensor::new(vec![1, 3, 1], vec![1.0, 99.0, 3.0]).unwrap();
        let out = aggregate_views(&s, &[vec![true], vec![false], vec![true]]).unwrap();
        assert_eq!(out.data(), &[2.0]);

        // all invisible → zero
        let out = aggregate_views(&s, &[vec![false], vec![false], vec![false]]).unwrap();
        assert_eq!(out.data(), &[0.0]);
    }

    #[test]
    fn aggregation_invariant_to_view_permutation() {
        let mut rng = crate::rng(8);
        let maps: Vec<Tensor> =
            (0..3).map(|_| Tensor::uniform(&mut rng, vec![2, 16, 16], 0.0, 1.0)).collect();
        let rig = toy_rig(maps.clone());
        let q = queries_at(vec![[5.0, 0.5, 0.2], [4.0, -1.0, 0.0]], 4);
        let (s1, m1) = sample_multiview(&q, &rig).unwrap();
        let a1 = aggregate_views(&s1, &m1).unwrap();

        let permuted = toy_rig(vec![maps[2].clone(), maps[0].clone(), maps[1].clone()]);
        let mut cams = permuted.cameras.clone();
        cams.rotate_left(0);
        let permuted = RigFrame {
            cameras: vec![rig.cameras[2].clone(), rig.cameras[0].clone(), rig.cameras[1].clone()],
            features: vec![
                permuted.features[0].clone(),
                permuted.features[1].clone(),
                permuted.features[2].clone(),
            ],
            depths: permuted.depths.clone(),
        };
        let (s2, m2) = sample_multiview(&q, &permuted).unwrap();
        let a2 = aggregate_views(&s2, &m2).unwrap();
        for (x, y) in a1.data().iter().zip(a2.data()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        let _ = cams;
    }

    #[test]
    fn fuse_query_concatenates_and_routes_gradient() {
        let f = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap().tracked();
        let q = Tensor::new(vec![1, 1], vec![3.0]).unwrap().tracked();
        let mut tape = Tape::new();
        let fid = tape.leaf(&f);
        let qid = tape.leaf(&q);
        let fused = fuse_query_on(&mut tape, fid, qid).unwrap();
        assert_eq!(tape.value(fused), &[1.0, 2.0, 3.0]);

        // gradient of a downstream loss reaches both halves
        let sq = tape.mul(fused, fused).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(fid).unwrap(), &[2.0, 4.0]);
        assert_eq!(tape.grad(qid).unwrap(), &[6.0]);

        // cross-check against finite differences on the f half
        let mut eval = |x: &Tensor| -> crate::error::Result<f64> {
            let mut t = Tape::new();
            let a = t.leaf(x);
            let b = t.constant(&q);
            let fu = fuse_query_on(&mut t, a, b)?;
            let sq = t.mul(fu, fu)?;
            let l = t.sum(sq);
            Ok(t.value(l)[0])
        };
        let fd = finite_difference_grad(&mut eval, &f, 1e-4).unwrap();
        assert_abs_diff_eq!(fd.data()[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fd.data()[1], 4.0, epsilon = 1e-6);
    }

    fn zero_pph(d_in: usize) -> Mlp {
        let mut rng = crate::rng(0);
        Mlp::new(
            &[d_in, pph_output_width(AgentClass::COUNT)],
            Activation::Relu,
            Init::Zero,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn zero_weight_head_keeps_anchors() {
        let q = queries_at(vec![[3.0, -1.0, 0.5]], 4);
        let pph = zero_pph(4);
        let mut tape = Tape::new();
        let bound = pph.bind(&mut tape);
        let feats = tape.leaf(&Tensor::ones(vec![1, 4]));
        let pos = tape.leaf(&q.positions);
        let props = propose_on(&mut tape, &pph, &bound, feats, pos, AgentClass::COUNT).unwrap();
        let boxes = props.boxes(&tape);
        assert_abs_diff_eq!(boxes[0].score, 0.5, epsilon = 1e-12);
        assert_eq!(boxes[0].center, [3.0, -1.0, 0.5]);
        // zero size residual → class prior (class 0 on tied logits)
        assert_eq!(boxes[0].class, 0);
        assert_eq!(boxes[0].size, AgentClass::Car.prior_size());
    }

    #[test]
    fn hand_set_head_gives_closed_form_score_and_class() {
        let q = queries_at(vec![[0.0, 0.0, 0.0]], 2);
        let mut pph = zero_pph(2);
        // bias of the score output = ln 3 → sigmoid gives 0.75;
        // class logits (0, 5, 0) → class 1
        for (name, p) in pph.params_mut() {
            if name == "layer0.bias" {
                p.apply_update(|i, v| match i {
                    0 => 3.0_f64.ln(),
                    9 => 5.0,
                    _ => v,
                });
            }
        }
        let mut tape = Tape::new();
        let bound = pph.bind(&mut tape);
        let feats = tape.leaf(&Tensor::zeros(vec![1, 2]));
        let pos = tape.leaf(&q.positions);
        let props = propose_on(&mut tape, &pph, &bound, feats, pos, AgentClass::COUNT).unwrap();
        let boxes = props.boxes(&tape);
        assert_abs_diff_eq!(boxes[0].score, 0.75, epsilon = 1e-12);
        assert_eq!(boxes[0].class, 1);
    }

    #[test]
    fn threshold_is_strict() {
        let mk = |score: f64| Box3D {
            center: [0.0; 3],
            size: [1.0; 3],
            yaw: 0.0,
            class: 0,
            score,
        };
        let feats = vec![Tensor::zeros(vec![2]); 3];
        let boxes = vec![mk(0.2), mk(0.9), mk(0.5)];
        let kept = threshold(&boxes, &feats, 0.5).unwrap();
        assert_eq!(kept.len(), 1);
        assert_abs_diff_eq!(kept[0].box3d.score, 0.9, epsilon = 1e-12);
        assert!(kept[0].history.is_empty());

        // τ = 0 with all positive scores retains everything
        let kept = threshold(&boxes, &feats, 0.0).unwrap();
        assert_eq!(kept.len(), 3);

        // score exactly τ is dropped
        let kept = threshold(&boxes, &feats, 0.9).unwrap();
        assert!(kept.is_empty() || kept.iter().all(|i| i.box3d.score > 0.9));
        assert_eq!(threshold(&[mk(0.5)], &feats[..1], 0.5).unwrap().len(), 0);
    }

    #[test]
    fn retained_count_is_monotone_in_tau() {
        let mut rng = crate::rng(33);
        let scores: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut last = usize::MAX;
        for k in 0..=10 {
            let tau = k as f64 / 10.0;
            let kept = threshold_indices(&scores, tau).len();
            assert!(kept <= last);
            last = kept;
        }
    }
}

//! Hierarchical fusion over instance features: temporal cross-attention
//! along each instance's own history, spatial self-attention within the
//! frame, deformable multi-view visual aggregation, sigmoid-gated text
//! injection, and residual depth refinement with a view-wise alignment
//! loss.
//!
//! Every stage runs on the gradient tape; attention weights are returned
//! alongside outputs so normalization can be checked directly.

use crate::error::{require, Result};
use crate::instance_init::{project_on_tape, RigFrame};
use crate::numeric::{Mlp, Tape, Tensor, Vid};

/// Projection matrices for the decoupled attention stages. Temporal and
/// spatial stages keep separate query/key/value parameters of size `d×d`.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub temporal_query: Tensor,
    pub temporal_key: Tensor,
    pub temporal_value: Tensor,
    pub spatial_query: Tensor,
    pub spatial_key: Tensor,
    pub spatial_value: Tensor,
}

impl AttentionParams {
    pub fn new<R: rand::Rng>(d: usize, rng: &mut R) -> AttentionParams {
        let s = 1.0 / (d as f64).sqrt();
        let mut mk = |_: &str| Tensor::uniform(rng, vec![d, d], -s, s).tracked();
        AttentionParams {
            temporal_query: mk("tq"),
            temporal_key: mk("tk"),
            temporal_value: mk("tv"),
            spatial_query: mk("sq"),
            spatial_key: mk("sk"),
            spatial_value: mk("sv"),
        }
    }

    pub fn dim(&self) -> usize {
        self.temporal_query.shape()[0]
    }

    pub fn params(&self) -> impl Iterator<Item = (String, &Tensor)> {
        [
            ("temporal_query", &self.temporal_query),
            ("temporal_key", &self.temporal_key),
            ("temporal_value", &self.temporal_value),
            ("spatial_query", &self.spatial_query),
            ("spatial_key", &self.spatial_key),
            ("spatial_value", &self.spatial_value),
        ]
        .map(|(n, t)| (n.to_string(), t))
        .into_iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor)> {
        [
            ("temporal_query", &mut self.temporal_query),
            ("temporal_key", &mut self.temporal_key),
            ("temporal_value", &mut self.temporal_value),
            ("spatial_query", &mut self.spatial_query),
            ("spatial_key", &mut self.spatial_key),
            ("spatial_value", &mut self.spatial_value),
        ]
        .map(|(n, t)| (n.to_string(), t))
        .into_iter()
    }
}

/// Tape bindings for [`AttentionParams`].
pub struct AttentionBound {
    pub tq: Vid,
    pub tk: Vid,
    pub tv: Vid,
    pub sq: Vid,
    pub sk: Vid,
    pub sv: Vid,
}

pub fn bind_attention(tape: &mut Tape, p: &AttentionParams) -> AttentionBound {
    AttentionBound {
        tq: tape.leaf(&p.temporal_query),
        tk: tape.leaf(&p.temporal_key),
        tv: tape.leaf(&p.temporal_value),
        sq: tape.leaf(&p.spatial_query),
        sk: tape.leaf(&p.spatial_key),
        sv: tape.leaf(&p.spatial_value),
    }
}

/// Scaled dot-product attention of one instance over its own history.
/// `stack` is `(k×d)` with the current frame in row 0 and older frames
/// after it; `key_mask`, when given, marks rows that are absent (padded) —
/// their weights collapse to zero. Returns the attended feature `(1×d)`
/// and the weight column `(k×1)`.
pub fn temporal_cross_attention(
    tape: &mut Tape,
    stack: Vid,
    bound: &AttentionBound,
    key_mask: Option<&[bool]>,
) -> Result<(Vid, Vid)> {
    let k = tape.shape(stack)[0];
    require(k >= 1, "temporal attention needs a nonempty history stack")?;
    let d = tape.shape(stack)[1];
    let current = tape.slice_rows(stack, 0, 1)?;
    let wq_t = tape.transpose(bound.tq)?;
    let q = tape.matmul(current, wq_t)?;
    let wk_t = tape.transpose(bound.tk)?;
    let keys = tape.matmul(stack, wk_t)?;
    let qt = tape.transpose(q)?;
    let scores = tape.matmul(keys, qt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let scores = match key_mask {
        Some(mask) => {
            require(mask.len() == k, "key mask length must match stack")?;
            // absent slots get a -1e30 logit and vanish under softmax
            let keep: Vec<bool> = mask.to_vec();
            tape.mask_rows_fill(scores, keep, -1e30)?
        }
        None => scores,
    };
    let weights = tape.softmax(scores, 0)?;
    let wv_t = tape.transpose(bound.tv)?;
    let values = tape.matmul(stack, wv_t)?;
    let wt = tape.transpose(weights)?;
    let out = tape.matmul(wt, values)?;
    Ok((out, weights))
}

/// Full self-attention over the instances of one frame: each instance
/// attends to all `N` (itself included). Returns `(N×d)` outputs and the
/// `(N×N)` weight matrix (rows sum to 1).
pub fn spatial_self_attention(
    tape: &mut Tape,
    frame: Vid,
    bound: &AttentionBound,
) -> Result<(Vid, Vid)> {
    let n = tape.shape(frame)[0];
    require(n >= 1, "spatial attention needs at least one instance")?;
    let d = tape.shape(frame)[1];
    let uq_t = tape.transpose(bound.sq)?;
    let uk_t = tape.transpose(bound.sk)?;
    let uv_t = tape.transpose(bound.sv)?;
    let q = tape.matmul(frame, uq_t)?;
    let k = tape.matmul(frame, uk_t)?;
    let v = tape.matmul(frame, uv_t)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax(scores, 1)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Deformable aggregation parameters: an offset head over the instance
/// feature, a projection of sampled image features into the instance
/// width, and the scoring vector for the joint view/point softmax.
#[derive(Debug, Clone)]
pub struct DeformableParams {
    /// Maps `(d)` instance features to `M·K·2` pixel offsets.
    pub offset_head: Mlp,
    /// `(d×C)`: projects a sampled `C`-vector into the instance width.
    pub feature_proj: Tensor,
    /// `(C)`: scoring vector for sampled features.
    pub score_weights: Tensor,
    /// Sampling points per view.
    pub points: usize,
}

impl DeformableParams {
    /// Offset head initialized to zero so initial samples sit at the
    /// projected centers.
    pub fn new<R: rand::Rng>(
        d: usize,
        channels: usize,
        views: usize,
        points: usize,
        rng: &mut R,
    ) -> Result<DeformableParams> {
        require(points >= 1, "deformable aggregation needs at least one point per view")?;
        let offset_head = Mlp::new(
            &[d, views * points * 2],
            crate::numeric::Activation::Relu,
            crate::numeric::Init::Zero,
            rng,
        )?;
        let s = 1.0 / (channels as f64).sqrt();
        Ok(DeformableParams {
            offset_head,
            feature_proj: Tensor::uniform(rng, vec![d, channels], -s, s).tracked(),
            score_weights: Tensor::uniform(rng, vec![channels], -1.0, 1.0).tracked(),
            points,
        })
    }

    pub fn params(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.offset_head
            .params()
            .map(|(n, t)| (format!("offset_head.{n}"), t))
            .chain([
                ("feature_proj".to_string(), &self.feature_proj),
                ("score_weights".to_string(), &self.score_weights),
            ])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor)> {
        self.offset_head
            .params_mut()
            .map(|(n, t)| (format!("offset_head.{n}"), t))
            .chain([
                ("feature_proj".to_string(), &mut self.feature_proj),
                ("score_weights".to_string(), &mut self.score_weights),
            ])
    }
}

pub struct DeformableBound {
    pub offset_head: Vec<(Vid, Vid)>,
    pub feature_proj: Vid,
    pub score_weights: Vid,
}

pub fn bind_deformable(tape: &mut Tape, p: &DeformableParams) -> DeformableBound {
    DeformableBound {
        offset_head: p.offset_head.bind(tape),
        feature_proj: tape.leaf(&p.feature_proj),
        score_weights: tape.leaf(&p.score_weights),
    }
}

/// Deformable multi-view aggregation: K offsets per view are predicted
/// from each instance feature, features are sampled bilinearly at the
/// offset positions (zero off-image), scored, softmax-normalized over the
/// joint (view, point) axis and fused through the feature projection.
/// Invisible views still participate with zero features (their logits are
/// exactly zero). Returns `(N×d)` aggregates and `(N×M·K)` weights.
pub fn deformable_aggregate(
    tape: &mut Tape,
    inst_features: Vid,
    positions: Vid,
    rig: &RigFrame,
    params: &DeformableParams,
    bound: &DeformableBound,
) -> Result<(Vid, Vid)> {
    let views = rig.views();
    let k = params.points;
    require(views * k >= 1, "deformable aggregation needs at least one sample")?;
    let offsets = params.offset_head.forward_on(tape, inst_features, &bound.offset_head)?;
    require(
        tape.shape(offsets)[1] == views * k * 2,
        format!("offset head emits {} values, need {}", tape.shape(offsets)[1], views * k * 2),
    )?;

    let mut sampled = Vec::with_capacity(views * k);
    for m in 0..views {
        let (coords, _, _) = project_on_tape(tape, positions, &rig.cameras[m])?;
        for p in 0..k {
            let col = (m * k + p) * 2;
            let off = tape.slice_cols(offsets, col, col + 2)?;
            let at = tape.add(coords, off)?;
            let z = tape.bilinear_sample(rig.features[m].clone(), at)?;
            sampled.push(z);
        }
    }

    // joint softmax over all (view, point) samples
    let w_alpha = tape.reshape(bound.score_weights, vec![rig.channels(), 1])?;
    let mut logits = Vec::with_capacity(sampled.len());
    for &z in &sampled {
        logits.push(tape.matmul(z, w_alpha)?);
    }
    let mut logit_mat = logits[0];
    for &l in &logits[1..] {
        logit_mat = tape.concat(logit_mat, l, 1)?;
    }
    let weights = tape.softmax(logit_mat, 1)?;

    let proj_t = tape.transpose(bound.feature_proj)?;
    let mut out: Option<Vid> = None;
    for (idx, &z) in sampled.iter().enumerate() {
        let zw = tape.matmul(z, proj_t)?;
        let w_col = tape.slice_cols(weights, idx, idx + 1)?;
        let contrib = tape.mul_col_broadcast(zw, w_col)?;
        out = Some(match out {
            Some(acc) => tape.add(acc, contrib)?,
            None => contrib,
        });
    }
    Ok((out.unwrap(), weights))
}

/// Concatenation of the attended instance feature with the aggregated
/// vision feature: `(N×d) × (N×d) → (N×2d)`.
pub fn fuse_vision(tape: &mut Tape, f_hat: Vid, v: Vid) -> Result<Vid> {
    require(
        tape.shape(f_hat)[1] == tape.shape(v)[1],
        "fuse_vision needs equal widths on both halves",
    )?;
    tape.concat(f_hat, v, 1)
}

/// Gated text injection parameters in the fused width `d'`.
#[derive(Debug, Clone)]
pub struct TextFusionParams {
    /// `(d'×d')`: projects the fused instance feature.
    pub instance_proj: Tensor,
    /// `(d'×d_T)`: projects the text embedding.
    pub text_proj: Tensor,
    /// `(2d')`: gate input weights.
    pub gate_weights: Tensor,
    /// Scalar gate bias.
    pub gate_bias: Tensor,
}

impl TextFusionParams {
    pub fn new<R: rand::Rng>(d_fused: usize, d_text: usize, rng: &mut R) -> TextFusionParams {
        let s = 1.0 / (d_fused as f64).sqrt();
        TextFusionParams {
            instance_proj: Tensor::uniform(rng, vec![d_fused, d_fused], -s, s).tracked(),
            text_proj: Tensor::uniform(rng, vec![d_fused, d_text], -s, s).tracked(),
            gate_weights: Tensor::zeros(vec![2 * d_fused]).tracked(),
            gate_bias: Tensor::zeros(vec![1]).tracked(),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = (String, &Tensor)> {
        [
            ("instance_proj", &self.instance_proj),
            ("text_proj", &self.text_proj),
            ("gate_weights", &self.gate_weights),
            ("gate_bias", &self.gate_bias),
        ]
        .map(|(n, t)| (n.to_string(), t))
        .into_iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (String, &mut Tensor)> {
        [
            ("instance_proj", &mut self.instance_proj),
            ("text_proj", &mut self.text_proj),
            ("gate_weights", &mut self.gate_weights),
            ("gate_bias", &mut self.gate_bias),
        ]
        .map(|(n, t)| (n.to_string(), t))
        .into_iter()
    }
}

pub struct TextFusionBound {
    pub instance_proj: Vid,
    pub text_proj: Vid,
    pub gate_weights: Vid,
    pub gate_bias: Vid,
}

pub fn bind_text_fusion(tape: &mut Tape, p: &TextFusionParams) -> TextFusionBound {
    TextFusionBound {
        instance_proj: tape.leaf(&p.instance_proj),
        text_proj: tape.leaf(&p.text_proj),
        gate_weights: tape.leaf(&p.gate_weights),
        gate_bias: tape.leaf(&p.gate_bias),
    }
}

/// Text conditional aggregation: both inputs are projected into the shared
/// width, a sigmoid gate is computed from their concatenation, and the
/// gated text feature is added. Returns `(N×d')` outputs and `(N×1)`
/// gates in (0,1).
pub fn text_conditional_aggregate(
    tape: &mut Tape,
    fused: Vid,
    text: Vid,
    bound: &TextFusionBound,
) -> Result<(Vid, Vid)> {
    let n = tape.shape(fused)[0];
    let d_fused = tape.shape(bound.instance_proj)[0];
    require(
        tape.shape(fused)[1] == tape.shape(bound.instance_proj)[1],
        format!(
            "fused width {} does not match instance projection {:?}",
            tape.shape(fused)[1],
            tape.shape(bound.instance_proj)
        ),
    )?;
    require(
        tape.shape(text) == [1, tape.shape(bound.text_proj)[1]],
        "text embedding width does not match text projection",
    )?;
    let wf_t = tape.transpose(bound.instance_proj)?;
    let f = tape.matmul(fused, wf_t)?;
    let wt_t = tape.transpose(bound.text_proj)?;
    let t = tape.matmul(text, wt_t)?;
    let t_vec = tape.reshape(t, vec![d_fused])?;
    let t_rep = tape.repeat_row(t_vec, n)?;
    let cat = tape.concat(f, t_rep, 1)?;
    let w_col = tape.reshape(bound.gate_weights, vec![2 * d_fused, 1])?;
    let logit = tape.matmul(cat, w_col)?;
    let logit = tape.add_row(logit, bound.gate_bias)?;
    let gates = tape.sigmoid(logit);
    let gated_text = tape.mul_col_broadcast(t_rep, gates)?;
    let out = tape.add(f, gated_text)?;
    Ok((out, gates))
}

/// Residual depth refinement: `refined = max(d_init + s·head(F), 0.1)`
/// where `s` is the residual decoding scale (1 leaves the head raw).
pub fn refine_depth(
    tape: &mut Tape,
    f_text: Vid,
    d_init: Vid,
    head: &Mlp,
    head_bound: &[(Vid, Vid)],
    residual_scale: f64,
) -> Result<Vid> {
    require(
        tape.value(d_init).iter().all(|&d| d > 0.0),
        "initial depth must be positive",
    )?;
    let residual = head.forward_on(tape, f_text, head_bound)?;
    require(tape.shape(residual)[1] == 1, "depth head must emit one value per instance")?;
    let residual = tape.scale(residual, residual_scale);
    let refined = tape.add(d_init, residual)?;
    Ok(tape.max_const(refined, 0.1))
}

/// View-wise depth alignment: mean absolute difference between the refined
/// depth and the depth-map reading at the projected position (nearest
/// pixel), averaged over the views where the instance is visible. Views
/// whose reading reaches `max_valid_depth` carry no observation of the
/// instance and are skipped like invisible views (pass infinity to count
/// every visible view). Returns the per-instance loss column `(N×1)` plus
/// a flag per instance that is false when no view saw it (loss 0 there).
pub fn depth_alignment_loss(
    tape: &mut Tape,
    refined: Vid,
    positions: Vid,
    rig: &RigFrame,
    max_valid_depth: f64,
) -> Result<(Vid, Vec<bool>)> {
    require(rig.views() >= 1, "depth alignment needs at least one view")?;
    let n = tape.shape(refined)[0];
    let mut acc: Option<Vid> = None;
    let mut counts = vec![0usize; n];
    for m in 0..rig.views() {
        let (coords, _, visible) = project_on_tape(tape, positions, &rig.cameras[m])?;
        // nearest-pixel depth reading: piecewise constant in the
        // projection, so no gradient flows through the coordinates
        let map = &rig.depths[m];
        let (h, w) = (map.shape()[1], map.shape()[2]);
        let mut readings = vec![0.0; n];
        let mut included = vec![false; n];
        for i in 0..n {
            if !visible[i] {
                continue;
            }
            let u = tape.value(coords)[i * 2].round();
            let v = tape.value(coords)[i * 2 + 1].round();
            if u < 0.0 || v < 0.0 || u as usize >= w || v as usize >= h {
                continue;
            }
            let d = map.data()[(v as usize) * w + u as usize];
            if d < max_valid_depth {
                readings[i] = d;
                included[i] = true;
            }
        }
        let dm = Tensor::new(vec![n, 1], readings)?;
        let dm = tape.constant(&dm);
        let diff = tape.sub(refined, dm)?;
        let diff = tape.abs(diff);
        let diff = tape.mask_rows_fill(diff, included.clone(), 0.0)?;
        for (i, &vis) in included.iter().enumerate() {
            counts[i] += vis as usize;
        }
        acc = Some(match acc {
            Some(a) => tape.add(a, diff)?,
            None => diff,
        });
    }
    let inv: Vec<f64> =
        counts.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 }).collect();
    let inv = Tensor::new(vec![n, 1], inv)?;
    let inv_id = tape.constant(&inv);
    let loss = tape.mul_col_broadcast(acc.unwrap(), inv_id)?;
    Ok((loss, counts.iter().map(|&c| c > 0).collect()))
}

//! The full trainable pipeline: sparse query initialization over rendered
//! multi-view features, hierarchical fusion (temporal → spatial →
//! deformable vision → gated text → depth refinement), anchor-based
//! multimodal trajectory heads for agents and the ego vehicle, and a
//! polyline map head. One forward pass covers a short window of frames so
//! instance histories feed the temporal attention.
//!
//! Queries and features live in the current ego frame; cameras sit at the
//! ego-frame origin.

use std::rc::Rc;

use crate::error::{require, Result};
use crate::fusion::{
    bind_attention, bind_deformable, bind_text_fusion, deformable_aggregate, depth_alignment_loss,
    fuse_vision, refine_depth, spatial_self_attention, temporal_cross_attention, text_conditional_aggregate,
    AttentionBound, AttentionParams, DeformableBound, DeformableParams, TextFusionBound,
    TextFusionParams,
};
use crate::geometry::{normalize_angle, to_subject, Box3D};
use crate::instance_init::{
    aggregate_views_on, fuse_query_on, pph_output_width, propose_on, sample_multiview_on,
    threshold, Instance3D, Proposals, QuerySet, RigFrame,
};
use crate::losses::{
    focal_loss_on, hungarian_match, matching_cost, motion_loss_on, planning_loss_on,
    total_loss_on, LossWeights,
};
use crate::numeric::{Activation, Adam, Init, Mlp, Tape, Tensor, Vid};
use crate::planner::AnchorSet;
use crate::simulator::{embed_text, render_views, Scenario, STEP_PERIOD};

/// Structural hyperparameters of the pipeline.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Instance feature width d for the attention stages.
    pub embed_dim: usize,
    /// Text embedding width.
    pub text_dim: usize,
    /// Query grid extents (x, y, z) over the scene volume.
    pub query_grid: (usize, usize, usize),
    /// Scene half-extents the query grid spans.
    pub half_xy: f64,
    pub half_z: f64,
    /// Deformable sampling points per view.
    pub points: usize,
    /// Camera views.
    pub views: usize,
    /// Feature map channels.
    pub channels: usize,
    /// Past frames kept in each instance history.
    pub history: usize,
    /// Trajectory modes (= anchors).
    pub mode_count: usize,
    /// Future steps predicted per mode.
    pub plan_horizon: usize,
    /// Proposal score threshold τ.
    pub score_threshold: f64,
    pub num_classes: usize,
    pub map_queries: usize,
    pub map_points: usize,
    pub map_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 8,
            text_dim: 16,
            query_grid: (4, 4, 2),
            half_xy: 50.0,
            half_z: 3.0,
            points: 4,
            views: 3,
            channels: 8,
            history: 3,
            mode_count: 6,
            plan_horizon: 6,
            score_threshold: 0.3,
            num_classes: 3,
            map_queries: 6,
            map_points: 4,
            map_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn query_count(&self) -> usize {
        self.query_grid.0 * self.query_grid.1 * self.query_grid.2
    }

    /// Width of the initial instance feature `[f ∥ q]`.
    pub fn init_width(&self) -> usize {
        self.channels + self.embed_dim
    }

    /// Width d' of the fused feature after vision concatenation.
    pub fn fused_width(&self) -> usize {
        2 * self.embed_dim
    }

    fn motion_head_width(&self) -> usize {
        self.mode_count * (2 * self.plan_horizon) + self.mode_count
    }

    fn plan_head_width(&self) -> usize {
        self.motion_head_width() + 2
    }

    fn map_head_width(&self) -> usize {
        self.map_points * 2 + self.map_classes
    }

    pub fn validate(&self) -> Result<()> {
        require(self.embed_dim >= 1 && self.channels >= 1, "widths must be positive")?;
        require(self.query_count() >= 1, "query grid must be non-empty")?;
        require(self.mode_count >= 1, "needs at least one mode")?;
        require(self.plan_horizon >= 1, "needs at least one future step")?;
        require((0.0..=1.0).contains(&self.score_threshold), "threshold must lie in [0,1]")?;
        require(self.history >= 1, "history must be at least 1 frame")?;
        Ok(())
    }
}

/// Depth and trajectory residual decoding scales (raw head outputs are
/// O(1); the gains let residuals span realistic corrections).
pub const DEPTH_RESIDUAL_SCALE: f64 = 5.0;
pub const TRAJ_RESIDUAL_SCALE: f64 = 3.0;

/// Evenly spread fallback anchors used before clustering replaces them.
pub fn spread_anchors(k: usize, horizon: usize, step: f64) -> AnchorSet {
    let anchors: Vec<Vec<[f64; 2]>> = (0..k)
        .map(|m| {
            let curvature = if k == 1 { 0.0 } else { (m as f64 - (k - 1) as f64 / 2.0) * 0.08 };
            (1..=horizon)
                .map(|t| {
                    let s = t as f64 * step;
                    [s, 0.5 * curvature * s * s]
                })
                .collect()
        })
        .collect();
    let labels = anchors.iter().map(|a| crate::planner::maneuver_label(a).to_string()).collect();
    AnchorSet { anchors, labels }
}

/// The complete parameter set.
pub struct Model {
    pub cfg: ModelConfig,
    pub queries: QuerySet,
    pub input_proj: Tensor,
    pub pph: Mlp,
    pub attention: AttentionParams,
    pub deformable: DeformableParams,
    pub text_fusion: TextFusionParams,
    pub history_proj: Tensor,
    pub depth_head: Mlp,
    pub motion_head: Mlp,
    pub ego_embed: Tensor,
    pub plan_head: Mlp,
    pub map_embed: Tensor,
    pub map_head: Mlp,
    pub motion_anchors: AnchorSet,
    pub plan_anchors: AnchorSet,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut rng = crate::rng(seed);
        let (nx, ny, nz) = cfg.query_grid;
        let queries =
            QuerySet::grid(nx, ny, nz, cfg.half_xy, cfg.half_z, cfg.embed_dim, &mut rng)?;
        let d = cfg.embed_dim;
        let dd = cfg.fused_width();
        let s_in = 1.0 / (cfg.init_width() as f64).sqrt();
        let s_hist = 1.0 / (dd as f64).sqrt();
        let model = Model {
            queries,
            input_proj: Tensor::uniform(&mut rng, vec![d, cfg.init_width()], -s_in, s_in).tracked(),
            pph: Mlp::new(
                &[cfg.init_width(), 32, pph_output_width(cfg.num_classes)],
                Activation::Relu,
                Init::Uniform(0.5),
                &mut rng,
            )?,
            attention: AttentionParams::new(d, &mut rng),
            deformable: DeformableParams::new(d, cfg.channels, cfg.views, cfg.points, &mut rng)?,
            text_fusion: TextFusionParams::new(dd, cfg.text_dim, &mut rng),
            history_proj: Tensor::uniform(&mut rng, vec![d, dd], -s_hist, s_hist).tracked(),
            depth_head: Mlp::new(&[dd, 8, 1], Activation::Relu, Init::Uniform(0.5), &mut rng)?,
            motion_head: Mlp::new(
                &[dd, 32, cfg.motion_head_width()],
                Activation::Relu,
                Init::Uniform(0.5),
                &mut rng,
            )?,
            ego_embed: Tensor::uniform(&mut rng, vec![dd], -0.5, 0.5).tracked(),
            plan_head: Mlp::new(
                &[2 * dd, 32, cfg.plan_head_width()],
                Activation::Relu,
                Init::Uniform(0.5),
                &mut rng,
            )?,
            map_embed: Tensor::uniform(&mut rng, vec![cfg.map_queries, dd], -0.5, 0.5).tracked(),
            map_head: Mlp::new(
                &[2 * dd, 32, cfg.map_head_width()],
                Activation::Relu,
                Init::Uniform(0.5),
                &mut rng,
            )?,
            motion_anchors: spread_anchors(cfg.mode_count, cfg.plan_horizon, 2.0 * STEP_PERIOD),
            plan_anchors: spread_anchors(cfg.mode_count, cfg.plan_horizon, 2.0 * STEP_PERIOD),
            cfg,
        };
        Ok(model)
    }

    /// Trainable parameters in a stable order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("queries.embeddings".into(), &self.queries.embeddings),
            ("queries.positions".into(), &self.queries.positions),
            ("queries.sizes".into(), &self.queries.sizes),
            ("input_proj".into(), &self.input_proj),
        ];
        out.extend(self.pph.params().map(|(n, t)| (format!("pph.{n}"), t)));
        out.extend(self.attention.params().map(|(n, t)| (format!("attention.{n}"), t)));
        out.extend(self.deformable.params().map(|(n, t)| (format!("deformable.{n}"), t)));
        out.extend(self.text_fusion.params().map(|(n, t)| (format!("text.{n}"), t)));
        out.push(("history_proj".into(), &self.history_proj));
        out.extend(self.depth_head.params().map(|(n, t)| (format!("depth_head.{n}"), t)));
        out.extend(self.motion_head.params().map(|(n, t)| (format!("motion_head.{n}"), t)));
        out.push(("ego_embed".into(), &self.ego_embed));
        out.extend(self.plan_head.params().map(|(n, t)| (format!("plan_head.{n}"), t)));
        out.push(("map_embed".into(), &self.map_embed));
        out.extend(self.map_head.params().map(|(n, t)| (format!("map_head.{n}"), t)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("queries.embeddings".into(), &mut self.queries.embeddings),
            ("queries.positions".into(), &mut self.queries.positions),
            ("queries.sizes".into(), &mut self.queries.sizes),
            ("input_proj".into(), &mut self.input_proj),
        ];
        out.extend(self.pph.params_mut().map(|(n, t)| (format!("pph.{n}"), t)));
        out.extend(self.attention.params_mut().map(|(n, t)| (format!("attention.{n}"), t)));
        out.extend(self.deformable.params_mut().map(|(n, t)| (format!("deformable.{n}"), t)));
        out.extend(self.text_fusion.params_mut().map(|(n, t)| (format!("text.{n}"), t)));
        out.push(("history_proj".into(), &mut self.history_proj));
        out.extend(self.depth_head.params_mut().map(|(n, t)| (format!("depth_head.{n}"), t)));
        out.extend(self.motion_head.params_mut().map(|(n, t)| (format!("motion_head.{n}"), t)));
        out.push(("ego_embed".into(), &mut self.ego_embed));
        out.extend(self.plan_head.params_mut().map(|(n, t)| (format!("plan_head.{n}"), t)));
        out.push(("map_embed".into(), &mut self.map_embed));
        out.extend(self.map_head.params_mut().map(|(n, t)| (format!("map_head.{n}"), t)));
        out
    }

    /// Everything that goes into the parameter file: trainable tensors
    /// plus the (frozen) anchor tensors.
    pub fn serializable(&self) -> Result<Vec<(String, Tensor)>> {
        let mut out: Vec<(String, Tensor)> =
            self.params().into_iter().map(|(n, t)| (n, t.clone())).collect();
        out.push(("anchors.motion".into(), self.motion_anchors.as_tensor()?));
        out.push(("anchors.plan".into(), self.plan_anchors.as_tensor()?));
        Ok(out)
    }

    /// Restores parameter values (and anchors) by name.
    pub fn load_values(&mut self, stored: &[(String, Tensor)]) -> Result<()> {
        for (name, value) in stored {
            if name == "anchors.motion" {
                self.motion_anchors = AnchorSet::from_tensor(value)?;
                continue;
            }
            if name == "anchors.plan" {
                self.plan_anchors = AnchorSet::from_tensor(value)?;
                continue;
            }
            let mut found = false;
            for (pname, p) in self.params_mut() {
                if &pname == name {
                    require(
                        p.shape() == value.shape(),
                        format!("shape mismatch for {name}: {:?} vs {:?}", p.shape(), value.shape()),
                    )?;
                    let data = value.data().to_vec();
                    p.apply_update(|i, _| data[i]);
                    found = true;
                    break;
                }
            }
            require(found, format!("unknown parameter {name}"))?;
        }
        Ok(())
    }
}

/// Tape bindings for one forward pass, in the same order as
/// [`Model::params`].
pub struct ModelBinding {
    pub query_embed: Vid,
    pub query_pos: Vid,
    pub query_sizes: Vid,
    pub input_proj: Vid,
    pub pph: Vec<(Vid, Vid)>,
    pub attention: AttentionBound,
    pub deformable: DeformableBound,
    pub text: TextFusionBound,
    pub history_proj: Vid,
    pub depth_head: Vec<(Vid, Vid)>,
    pub motion_head: Vec<(Vid, Vid)>,
    pub ego_embed: Vid,
    pub plan_head: Vec<(Vid, Vid)>,
    pub map_embed: Vid,
    pub map_head: Vec<(Vid, Vid)>,
    /// Leaf ids aligned with `Model::params()` order.
    pub leaf_ids: Vec<Vid>,
}

impl Model {
    pub fn bind(&self, tape: &mut Tape) -> ModelBinding {
        let query_embed = tape.leaf(&self.queries.embeddings);
        let query_pos = tape.leaf(&self.queries.positions);
        let query_sizes = tape.leaf(&self.queries.sizes);
        let input_proj = tape.leaf(&self.input_proj);
        let pph = self.pph.bind(tape);
        let attention = bind_attention(tape, &self.attention);
        let deformable = bind_deformable(tape, &self.deformable);
        let text = bind_text_fusion(tape, &self.text_fusion);
        let history_proj = tape.leaf(&self.history_proj);
        let depth_head = self.depth_head.bind(tape);
        let motion_head = self.motion_head.bind(tape);
        let ego_embed = tape.leaf(&self.ego_embed);
        let plan_head = self.plan_head.bind(tape);
        let map_embed = tape.leaf(&self.map_embed);
        let map_head = self.map_head.bind(tape);

        let mut leaf_ids = vec![query_embed, query_pos, query_sizes, input_proj];
        for &(w, b) in &pph {
            leaf_ids.extend([w, b]);
        }
        leaf_ids.extend([
            attention.tq,
            attention.tk,
            attention.tv,
            attention.sq,
            attention.sk,
            attention.sv,
        ]);
        for &(w, b) in &deformable.offset_head {
            leaf_ids.extend([w, b]);
        }
        leaf_ids.extend([deformable.feature_proj, deformable.score_weights]);
        leaf_ids.extend([text.instance_proj, text.text_proj, text.gate_weights, text.gate_bias]);
        leaf_ids.push(history_proj);
        for &(w, b) in &depth_head {
            leaf_ids.extend([w, b]);
        }
        for &(w, b) in &motion_head {
            leaf_ids.extend([w, b]);
        }
        leaf_ids.push(ego_embed);
        for &(w, b) in &plan_head {
            leaf_ids.extend([w, b]);
        }
        leaf_ids.push(map_embed);
        for &(w, b) in &map_head {
            leaf_ids.extend([w, b]);
        }

        ModelBinding {
            query_embed,
            query_pos,
            query_sizes,
            input_proj,
            pph,
            attention,
            deformable,
            text,
            history_proj,
            depth_head,
            motion_head,
            ego_embed,
            plan_head,
            map_embed,
            map_head,
            leaf_ids,
        }
    }
}

/// Rendered inputs of one frame expressed in that frame's ego coordinates.
pub fn rig_frame(scenario: &Scenario, frame: usize) -> Result<RigFrame> {
    let rig = &scenario.rig;
    let (features, depths) = render_views(scenario, frame, rig)?;
    let cameras = rig.cameras([0.0, 0.0], 0.0);
    let depths = depths
        .into_iter()
        .map(|d| {
            let (h, w) = (d.shape()[0], d.shape()[1]);
            Tensor::new(vec![1, h, w], d.data().to_vec()).map(Rc::new)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RigFrame { cameras, features: features.into_iter().map(Rc::new).collect(), depths })
}

/// Outputs of a window forward pass, attached to the tape.
pub struct WindowForward {
    pub proposals: Proposals,
    /// Final-frame fused features `(N×d')`.
    pub f_text: Vid,
    /// Final-frame deformable vision aggregate `(N×d)`.
    pub vision_agg: Vid,
    /// Projected text feature `(1×d')` of the final frame.
    pub text_feat: Vid,
    /// Pre-text fused feature `(N×d')` (for diagnostics).
    pub f_final: Vid,
    pub refined_depth: Vid,
    /// Per-instance view-alignment loss column `(N×1)` plus visibility.
    pub align_loss: Vid,
    pub align_seen: Vec<bool>,
    /// Raw motion head output `(N × M·2T + M)`.
    pub motion_raw: Vid,
    /// Ego mode points `(M × 2T)`, logits `(1×M)`, status `(1×2)`.
    pub ego_modes: Vid,
    pub ego_logits: Vid,
    pub ego_status: Vid,
    /// Map polyline points `(N_map × P·2)` and class logits.
    pub map_points: Vid,
    pub map_logits: Vid,
    /// Every attention/aggregation weight vector produced in the window.
    pub attention_weights: Vec<Vid>,
}

impl Model {
    /// Runs the pipeline over frames `frame − history .. frame` so the
    /// temporal stage sees a populated history, then decodes proposals and
    /// trajectory heads at the final frame.
    pub fn forward_window(
        &self,
        tape: &mut Tape,
        binding: &ModelBinding,
        scenario: &Scenario,
        frame: usize,
    ) -> Result<WindowForward> {
        let cfg = &self.cfg;
        require(frame < scenario.duration, "frame out of range")?;
        require(
            frame >= cfg.history,
            format!("frame {frame} leaves fewer than {} past frames", cfg.history),
        )?;
        require(
            scenario.rig.channels == cfg.channels && scenario.rig.views == cfg.views,
            "scenario rig does not match the model configuration",
        )?;
        let start = frame - cfg.history;

        let mut history: Vec<Vid> = Vec::new(); // (N×d) per past frame, newest first
        let mut weights: Vec<Vid> = Vec::new();
        let mut last = None;

        for f in start..=frame {
            let rig = rig_frame(scenario, f)?;
            // instance initialization
            let samples = sample_multiview_on(tape, binding.query_pos, &rig)?;
            let f_agg = aggregate_views_on(tape, &samples)?;
            let f_init = fuse_query_on(tape, f_agg, binding.query_embed)?;
            // project into the attention width
            let in_t = tape.transpose(binding.input_proj)?;
            let cur = tape.matmul(f_init, in_t)?;

            // temporal attention per instance over [current, history...]
            let n = cfg.query_count();
            let mut attended_rows = Vec::with_capacity(n);
            for i in 0..n {
                let mut stack = tape.slice_rows(cur, i, i + 1)?;
                for &h in &history {
                    let row = tape.slice_rows(h, i, i + 1)?;
                    stack = tape.concat(stack, row, 0)?;
                }
                let (out, w) =
                    temporal_cross_attention(tape, stack, &binding.attention, None)?;
                attended_rows.push(out);
                weights.push(w);
            }
            let mut f_tilde = attended_rows[0];
            for &row in &attended_rows[1..] {
                f_tilde = tape.concat(f_tilde, row, 0)?;
            }

            // spatial attention within the frame
            let (f_hat, sw) = spatial_self_attention(tape, f_tilde, &binding.attention)?;
            weights.push(sw);

            // deformable vision aggregation
            let (vision, dw) = deformable_aggregate(
                tape,
                f_hat,
                binding.query_pos,
                &rig,
                &self.deformable,
                &binding.deformable,
            )?;
            weights.push(dw);
            let f_final = fuse_vision(tape, f_hat, vision)?;

            // text conditional aggregation from the frame's annotation
            let ann_text = scenario
                .annotations
                .iter()
                .find(|a| a.frame == f)
                .map(|a| a.text.clone())
                .unwrap_or_else(|| "clear scene ahead".to_string());
            let text_vec = embed_text(&ann_text, cfg.text_dim)?;
            let text_row = Tensor::new(vec![1, cfg.text_dim], text_vec.data().to_vec())?;
            let text_id = tape.constant(&text_row);
            let (f_text, gates) =
                text_conditional_aggregate(tape, f_final, text_id, &binding.text)?;
            let _ = gates;

            // fold into history for the next frame
            let hp_t = tape.transpose(binding.history_proj)?;
            let folded = tape.matmul(f_text, hp_t)?;
            history.insert(0, folded);
            history.truncate(cfg.history);

            if f == frame {
                last = Some((rig, f_init, vision, f_final, f_text, text_id));
            }
        }
        let (rig, f_init, vision_agg, f_final, f_text, text_feat) =
            last.expect("window covers at least one frame");

        // proposal head on the final frame
        let proposals = propose_on(
            tape,
            &self.pph,
            &binding.pph,
            f_init,
            binding.query_pos,
            cfg.num_classes,
        )?;

        // depth refinement: initial depth is the range from the ego origin
        let pos_sq = tape.mul(proposals.positions, proposals.positions)?;
        let ones3 = Tensor::new(vec![3, 1], vec![1.0; 3])?;
        let ones3 = tape.constant(&ones3);
        let range_sq = tape.matmul(pos_sq, ones3)?;
        let range_sq = tape.add_scalar(range_sq, 1e-12);
        let d_init = tape.sqrt(range_sq);
        let refined_depth = refine_depth(
            tape,
            f_text,
            d_init,
            &self.depth_head,
            &binding.depth_head,
            DEPTH_RESIDUAL_SCALE,
        )?;
        let (align_loss, align_seen) = depth_alignment_loss(
            tape,
            refined_depth,
            proposals.positions,
            &rig,
            crate::simulator::BACKGROUND_DEPTH,
        )?;

        // motion head over all instances
        let motion_raw = self.motion_head.forward_on(tape, f_text, &binding.motion_head)?;

        // ego plan head over pooled context
        let n = cfg.query_count();
        let pool = Tensor::new(vec![1, n], vec![1.0 / n as f64; n])?;
        let pool = tape.constant(&pool);
        let pooled = tape.matmul(pool, f_text)?;
        let ego_row = tape.reshape(binding.ego_embed, vec![1, cfg.fused_width()])?;
        let ego_in = tape.concat(pooled, ego_row, 1)?;
        let plan_raw = self.plan_head.forward_on(tape, ego_in, &binding.plan_head)?;
        let m = cfg.mode_count;
        let t2 = 2 * cfg.plan_horizon;
        let ego_residuals = tape.slice_cols(plan_raw, 0, m * t2)?;
        let ego_residuals = tape.scale(ego_residuals, TRAJ_RESIDUAL_SCALE);
        let ego_residuals = tape.reshape(ego_residuals, vec![m, t2])?;
        let plan_anchor_const = tape.constant(&self.plan_anchors.as_tensor()?);
        let ego_modes = tape.add(ego_residuals, plan_anchor_const)?;
        let ego_logits = tape.slice_cols(plan_raw, m * t2, m * t2 + m)?;
        let ego_status = tape.slice_cols(plan_raw, m * t2 + m, m * t2 + m + 2)?;

        // map head: static queries conditioned on the pooled scene feature
        let pooled_rep = {
            let ones = Tensor::new(vec![cfg.map_queries, 1], vec![1.0; cfg.map_queries])?;
            let ones = tape.constant(&ones);
            tape.matmul(ones, pooled)?
        };
        let map_in = tape.concat(binding.map_embed, pooled_rep, 1)?;
        let map_raw = self.map_head.forward_on(tape, map_in, &binding.map_head)?;
        let map_points = tape.slice_cols(map_raw, 0, cfg.map_points * 2)?;
        let map_logits =
            tape.slice_cols(map_raw, cfg.map_points * 2, cfg.map_head_width())?;

        Ok(WindowForward {
            proposals,
            f_text,
            vision_agg,
            text_feat,
            f_final,
            refined_depth,
            align_loss,
            align_seen,
            motion_raw,
            ego_modes,
            ego_logits,
            ego_status,
            map_points,
            map_logits,
            attention_weights: weights,
        })
    }

    /// Anchor-relative trajectory modes of one instance: `(M × 2T)` points
    /// plus `(1×M)` logits.
    pub fn agent_modes(&self, tape: &mut Tape, motion_raw: Vid, instance: usize) -> Result<(Vid, Vid)> {
        let m = self.cfg.mode_count;
        let t2 = 2 * self.cfg.plan_horizon;
        let row = tape.slice_rows(motion_raw, instance, instance + 1)?;
        let residuals = tape.slice_cols(row, 0, m * t2)?;
        let residuals = tape.scale(residuals, TRAJ_RESIDUAL_SCALE);
        let residuals = tape.reshape(residuals, vec![m, t2])?;
        let anchors = tape.constant(&self.motion_anchors.as_tensor()?);
        let modes = tape.add(residuals, anchors)?;
        let logits = tape.slice_cols(row, m * t2, m * t2 + m)?;
        Ok((modes, logits))
    }
}

// ── ground truth assembly ────────────────────────────────────────────────

/// Ground-truth boxes at a frame, in the ego frame.
pub fn gt_boxes_ego(scenario: &Scenario, frame: usize) -> Vec<Box3D> {
    let pose = scenario.ego_pose(frame);
    scenario
        .agents
        .iter()
        .map(|track| {
            let b = track.box3d_at(frame);
            let p = to_subject(&[[b.center[0], b.center[1]]], pose)[0];
            Box3D {
                center: [p[0], p[1], b.center[2]],
                size: b.size,
                yaw: normalize_angle(b.yaw - pose.1),
                class: b.class,
                score: 1.0,
            }
        })
        .collect()
}

fn resample_polyline(pts: &[[f64; 2]], count: usize) -> Vec<[f64; 2]> {
    if pts.len() < 2 {
        return vec![pts.first().copied().unwrap_or([0.0, 0.0]); count];
    }
    let mut arcs = vec![0.0];
    for w in pts.windows(2) {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        arcs.push(arcs.last().unwrap() + d);
    }
    let total = *arcs.last().unwrap();
    (0..count)
        .map(|k| {
            let target = total * k as f64 / (count - 1).max(1) as f64;
            let mut seg = 0;
            while seg + 2 < arcs.len() && arcs[seg + 1] < target {
                seg += 1;
            }
            let span = (arcs[seg + 1] - arcs[seg]).max(1e-12);
            let t = ((target - arcs[seg]) / span).clamp(0.0, 1.0);
            [
                pts[seg][0] + t * (pts[seg + 1][0] - pts[seg][0]),
                pts[seg][1] + t * (pts[seg + 1][1] - pts[seg][1]),
            ]
        })
        .collect()
}

/// Ego-frame map elements: lane centerlines (class 0) and drivable
/// boundary rings (class 1), each resampled to a fixed point count.
pub fn gt_map_elements(
    scenario: &Scenario,
    frame: usize,
    points: usize,
) -> Vec<(usize, Vec<[f64; 2]>)> {
    let pose = scenario.ego_pose(frame);
    let mut out = Vec::new();
    for (_, lane) in &scenario.map.lanes {
        let ego = to_subject(lane, pose);
        out.push((0, resample_polyline(&ego, points)));
    }
    for poly in &scenario.map.drivable {
        let mut ring = poly.clone();
        ring.push(poly[0]);
        let ego = to_subject(&ring, pose);
        out.push((1, resample_polyline(&ego, points)));
    }
    out
}

// ── training ─────────────────────────────────────────────────────────────

/// Per-task loss values of one training step.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub detection: f64,
    pub map: f64,
    pub depth: f64,
    pub motion: f64,
    pub planning: f64,
    pub total: f64,
}

/// Builds the multi-task training loss for one (scenario, frame) sample.
/// Returns the tape, the scalar loss node, and the per-task values.
pub fn training_loss(
    model: &Model,
    scenario: &Scenario,
    frame: usize,
    weights: &LossWeights,
) -> Result<(Tape, Vid, ModelBinding, LossBreakdown)> {
    weights.validate()?;
    let cfg = &model.cfg;
    require(
        frame + cfg.plan_horizon < scenario.duration,
        "frame leaves no room for the planning horizon",
    )?;
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape);
    let fwd = model.forward_window(&mut tape, &binding, scenario, frame)?;

    let gt = gt_boxes_ego(scenario, frame);
    let n = cfg.query_count();

    // detection: Hungarian assignment on plain values
    let pred_boxes = fwd.proposals.boxes(&tape);
    let class_probs: Vec<Vec<f64>> = {
        let logits = tape.value(fwd.proposals.class_logits);
        (0..n)
            .map(|i| {
                let row = &logits[i * cfg.num_classes..(i + 1) * cfg.num_classes];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|l| (l - mx).exp()).collect();
                let z: f64 = exps.iter().sum();
                exps.iter().map(|e| e / z).collect()
            })
            .collect()
    };
    let mut components = Vec::new();
    let mut breakdown = LossBreakdown::default();

    let assignment = if gt.is_empty() {
        Vec::new()
    } else {
        let cost = matching_cost(&gt, &pred_boxes, &class_probs)?;
        hungarian_match(&cost)?
    };

    // objectness focal over every query: matched queries are positives
    let mut labels = vec![0usize; n];
    for &w in &assignment {
        labels[w] = 1;
    }
    let neg_scores = tape.neg(fwd.proposals.scores);
    let one_minus = tape.add_scalar(neg_scores, 1.0);
    let score_probs = tape.concat(one_minus, fwd.proposals.scores, 1)?;
    let score_focal =
        focal_loss_on(&mut tape, score_probs, &labels, weights.focal_alpha, weights.focal_gamma)?;
    let score_focal = tape.mean(score_focal);

    let det_c = if assignment.is_empty() {
        tape.scale(score_focal, weights.det_c)
    } else {
        let matched: Vec<usize> = assignment.clone();
        let matched_logits = tape.gather_rows(fwd.proposals.class_logits, matched.clone())?;
        let matched_probs = tape.softmax(matched_logits, 1)?;
        let gt_classes: Vec<usize> = gt.iter().map(|g| g.class).collect();
        let class_focal = focal_loss_on(
            &mut tape,
            matched_probs,
            &gt_classes,
            weights.focal_alpha,
            weights.focal_gamma,
        )?;
        let class_focal = tape.mean(class_focal);
        let both = tape.add(score_focal, class_focal)?;
        tape.scale(both, weights.det_c)
    };
    components.push(det_c);
    breakdown.detection += tape.value(det_c)[0];

    if !assignment.is_empty() {
        // box regression on matched pairs
        let matched = assignment.clone();
        let pos = tape.gather_rows(fwd.proposals.positions, matched.clone())?;
        let sizes = tape.gather_rows(fwd.proposals.sizes, matched.clone())?;
        let yaws = tape.gather_rows(fwd.proposals.yaws, matched.clone())?;
        let params = tape.concat(pos, sizes, 1)?;
        let params = tape.concat(params, yaws, 1)?;
        let gt_params: Vec<f64> = gt.iter().flat_map(|g| crate::losses::box_params(g)).collect();
        let gt_params = Tensor::new(vec![gt.len(), 7], gt_params)?;
        let reg = crate::losses::l1_rows_on(&mut tape, params, &gt_params)?;
        let reg = tape.mean(reg);
        let det_r = tape.scale(reg, weights.det_r);
        components.push(det_r);
        breakdown.detection += tape.value(det_r)[0];

        // depth: refined range vs true range, plus view alignment
        let matched_depth = tape.gather_rows(fwd.refined_depth, matched.clone())?;
        let gt_ranges: Vec<f64> = gt
            .iter()
            .map(|g| {
                (g.center[0].powi(2) + g.center[1].powi(2) + g.center[2].powi(2)).sqrt()
            })
            .collect();
        let gt_ranges_t = Tensor::new(vec![gt.len(), 1], gt_ranges)?;
        let depth = crate::losses::depth_loss_on(&mut tape, matched_depth, &gt_ranges_t, weights.depth)?;
        let matched_align = tape.gather_rows(fwd.align_loss, matched.clone())?;
        let align = tape.mean(matched_align);
        let depth_total = tape.add(depth, align)?;
        components.push(depth_total);
        breakdown.depth += tape.value(depth_total)[0];

        // motion: winner-take-all per matched agent with a future
        let mut motion_terms = Vec::new();
        for (agent, &query) in assignment.iter().enumerate() {
            if let Some(future) = scenario.agent_future(agent, frame, cfg.plan_horizon) {
                let (modes, logits) = model.agent_modes(&mut tape, fwd.motion_raw, query)?;
                let (loss, _) = motion_loss_on(
                    &mut tape,
                    modes,
                    logits,
                    &future,
                    weights.motion_c,
                    weights.motion_r,
                    weights.focal_alpha,
                    weights.focal_gamma,
                )?;
                motion_terms.push(loss);
            }
        }
        if !motion_terms.is_empty() {
            let mut acc = motion_terms[0];
            for &t in &motion_terms[1..] {
                acc = tape.add(acc, t)?;
            }
            let motion = tape.scale(acc, 1.0 / motion_terms.len() as f64);
            components.push(motion);
            breakdown.motion = tape.value(motion)[0];
        }
    }

    // map loss
    let elements = gt_map_elements(scenario, frame, cfg.map_points);
    if !elements.is_empty() && elements.len() <= cfg.map_queries {
        let pred_pts = tape.value(fwd.map_points).to_vec();
        let mut cost = vec![0.0; elements.len() * cfg.map_queries];
        for (j, (_, pts)) in elements.iter().enumerate() {
            for w in 0..cfg.map_queries {
                let row = &pred_pts[w * cfg.map_points * 2..(w + 1) * cfg.map_points * 2];
                let mut l1 = 0.0;
                for (k, p) in pts.iter().enumerate() {
                    l1 += (row[2 * k] - p[0]).abs() + (row[2 * k + 1] - p[1]).abs();
                }
                cost[j * cfg.map_queries + w] = l1 / (cfg.map_points * 2) as f64;
            }
        }
        let cost = Tensor::new(vec![elements.len(), cfg.map_queries], cost)?;
        let map_assignment = hungarian_match(&cost)?;
        let matched: Vec<usize> = map_assignment.clone();
        let matched_pts = tape.gather_rows(fwd.map_points, matched.clone())?;
        let gt_flat: Vec<f64> =
            elements.iter().flat_map(|(_, pts)| pts.iter().flatten().copied()).collect();
        let gt_t = Tensor::new(vec![elements.len(), cfg.map_points * 2], gt_flat)?;
        let map_reg = crate::losses::l1_rows_on(&mut tape, matched_pts, &gt_t)?;
        let map_reg = tape.mean(map_reg);
        let map_reg = tape.scale(map_reg, weights.map_r);

        let matched_logits = tape.gather_rows(fwd.map_logits, matched)?;
        let matched_probs = tape.softmax(matched_logits, 1)?;
        let gt_classes: Vec<usize> = elements.iter().map(|(c, _)| *c).collect();
        let map_cls = focal_loss_on(
            &mut tape,
            matched_probs,
            &gt_classes,
            weights.focal_alpha,
            weights.focal_gamma,
        )?;
        let map_cls = tape.mean(map_cls);
        let map_cls = tape.scale(map_cls, weights.map_c);
        let map_total = tape.add(map_reg, map_cls)?;
        components.push(map_total);
        breakdown.map = tape.value(map_total)[0];
    }

    // planning loss on the ego trajectory and status
    if let Some(ego_future) = scenario.ego_future(frame, cfg.plan_horizon) {
        let status_gt = scenario.ego_status(frame);
        let (plan, _) = planning_loss_on(
            &mut tape,
            fwd.ego_modes,
            fwd.ego_logits,
            &ego_future,
            fwd.ego_status,
            [status_gt.0, status_gt.1],
            weights,
        )?;
        components.push(plan);
        breakdown.planning = tape.value(plan)[0];
    }

    let total = total_loss_on(&mut tape, &components)?;
    breakdown.total = tape.value(total)[0];
    Ok((tape, total, binding, breakdown))
}

/// Gradient-descent training driver.
pub struct Trainer {
    pub model: Model,
    pub weights: LossWeights,
    optimizer: Adam,
}

impl Trainer {
    pub fn new(model: Model, weights: LossWeights, learning_rate: f64) -> Trainer {
        Trainer { model, weights, optimizer: Adam::new(learning_rate) }
    }

    /// One optimization step on a (scenario, frame) sample; returns the
    /// total loss before the update.
    pub fn step(&mut self, scenario: &Scenario, frame: usize) -> Result<LossBreakdown> {
        self.step_batch(&[(scenario, frame)])
    }

    /// One optimization step over a mini-batch: gradients are averaged
    /// across the samples before the update. Returns the mean breakdown.
    pub fn step_batch(&mut self, batch: &[(&Scenario, usize)]) -> Result<LossBreakdown> {
        require(!batch.is_empty(), "training batch must be nonempty")?;
        let mut grads: Vec<Vec<f64>> = Vec::new();
        let mut mean = LossBreakdown::default();
        for &(scenario, frame) in batch {
            let (mut tape, total, binding, breakdown) =
                training_loss(&self.model, scenario, frame, &self.weights)?;
            tape.backward(total)?;
            if grads.is_empty() {
                grads = binding
                    .leaf_ids
                    .iter()
                    .map(|&id| tape.grad(id).map(|g| g.to_vec()))
                    .collect::<Result<_>>()?;
            } else {
                for (acc, &id) in grads.iter_mut().zip(&binding.leaf_ids) {
                    for (a, g) in acc.iter_mut().zip(tape.grad(id)?) {
                        *a += g;
                    }
                }
            }
            mean.total += breakdown.total;
            mean.detection += breakdown.detection;
            mean.map += breakdown.map;
            mean.depth += breakdown.depth;
            mean.motion += breakdown.motion;
            mean.planning += breakdown.planning;
        }
        let scale = 1.0 / batch.len() as f64;
        for g in grads.iter_mut().flatten() {
            *g *= scale;
        }
        mean.total *= scale;
        mean.detection *= scale;
        mean.map *= scale;
        mean.depth *= scale;
        mean.motion *= scale;
        mean.planning *= scale;

        let mut params = self.model.params_mut();
        require(params.len() == grads.len(), "parameter/gradient count mismatch")?;
        let mut pairs: Vec<(&mut Tensor, &[f64])> = params
            .iter_mut()
            .zip(&grads)
            .map(|((_, p), g)| (&mut **p, g.as_slice()))
            .collect();
        self.optimizer.update(&mut pairs);
        Ok(mean)
    }

    pub fn into_model(self) -> Model {
        self.model
    }
}

/// Clusters motion and plan anchors from scenario ground truth.
pub fn fit_anchors(model: &mut Model, scenarios: &[Scenario], seed: u64) -> Result<()> {
    let cfg = &model.cfg;
    let mut agent_futures = Vec::new();
    let mut ego_futures = Vec::new();
    for s in scenarios {
        for frame in (cfg.history - 1)..s.duration.saturating_sub(cfg.plan_horizon) {
            for agent in 0..s.agents.len() {
                if let Some(f) = s.agent_future(agent, frame, cfg.plan_horizon) {
                    agent_futures.push(f);
                }
            }
            if let Some(f) = s.ego_future(frame, cfg.plan_horizon) {
                ego_futures.push(f);
            }
        }
    }
    if agent_futures.len() >= cfg.mode_count {
        model.motion_anchors =
            crate::planner::cluster_anchors(&agent_futures, cfg.mode_count, seed)?;
    }
    if ego_futures.len() >= cfg.mode_count {
        model.plan_anchors = crate::planner::cluster_anchors(&ego_futures, cfg.mode_count, seed)?;
    }
    Ok(())
}

// ── evaluation ───────────────────────────────────────────────────────────

/// Everything the metrics need from evaluating one scenario frame.
pub struct ScenarioEval {
    pub instances: Vec<Instance3D>,
    /// Per ground-truth agent: predicted world-frame modes and the
    /// world-frame ground-truth future.
    pub agent_predictions: Vec<(Vec<Vec<[f64; 2]>>, Vec<[f64; 2]>)>,
    /// The same pairs with the current agent state given: modes decoded in
    /// the ground-truth agent frame against the agent-frame future.
    pub agent_frame_predictions: Vec<(Vec<Vec<[f64; 2]>>, Vec<[f64; 2]>)>,
    /// Ego-frame candidate plan set after scoring.
    pub ego_plan: crate::planner::TrajectorySet,
    pub selection: crate::planner::Selection,
    /// True when even the anchor fallback found no feasible candidate.
    pub infeasible: bool,
    /// Pooled feature snapshots for information diagnostics.
    pub features_text: Vec<Tensor>,
    pub features_vision_only: Vec<Tensor>,
    pub features_vision_agg: Vec<Tensor>,
    pub features_text_embed: Vec<Tensor>,
}

/// World model for planning at a frame, built from ground-truth agent
/// motion (the evaluation protocol plans against the recorded futures).
pub fn world_at(scenario: &Scenario, frame: usize, horizon: usize) -> crate::planner::WorldModel {
    let dynamic: Vec<Vec<crate::geometry::OrientedBox2D>> = scenario
        .agents
        .iter()
        .map(|track| {
            (1..=horizon)
                .map(|k| {
                    let f = (frame + k).min(scenario.duration - 1);
                    track.box3d_at(f).footprint()
                })
                .collect()
        })
        .collect();
    crate::planner::WorldModel {
        drivable: scenario.map.drivable.clone(),
        static_obstacles: Vec::new(),
        dynamic,
        route: scenario.route.clone(),
        ego_pose: scenario.ego_pose(frame),
        ego_half_extents: [2.04, 0.92],
    }
}

/// Obstacle timeline for the corrected collision protocol.
pub fn timeline_at(scenario: &Scenario, frame: usize, horizon: usize) -> crate::metrics::WorldTimeline {
    let dynamic: Vec<Vec<crate::geometry::OrientedBox2D>> = (1..=horizon)
        .map(|k| {
            let f = (frame + k).min(scenario.duration - 1);
            scenario.agents.iter().map(|t| t.box3d_at(f).footprint()).collect()
        })
        .collect();
    crate::metrics::WorldTimeline { static_obstacles: Vec::new(), dynamic }
}

/// Runs the frozen model on one scenario frame: detection, per-agent
/// prediction, and feasibility-masked plan selection (falling back to raw
/// anchors when no predicted mode is feasible).
pub fn evaluate_scenario(
    model: &Model,
    scenario: &Scenario,
    frame: usize,
    utility_weights: &crate::planner::UtilityWeights,
) -> Result<ScenarioEval> {
    let cfg = &model.cfg;
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape);
    let fwd = model.forward_window(&mut tape, &binding, scenario, frame)?;

    let boxes = fwd.proposals.boxes(&tape);
    let n = cfg.query_count();
    let features: Vec<Tensor> = (0..n)
        .map(|i| {
            Tensor::new(vec![cfg.fused_width()], tape.value(fwd.f_text)[i * cfg.fused_width()..(i + 1) * cfg.fused_width()].to_vec())
        })
        .collect::<Result<_>>()?;
    let instances = threshold(&boxes, &features, cfg.score_threshold)?;

    // associate ground-truth agents with proposals by center distance
    let gt = gt_boxes_ego(scenario, frame);
    let mut agent_predictions = Vec::new();
    let mut agent_frame_predictions = Vec::new();
    if !gt.is_empty() {
        let mut cost = vec![0.0; gt.len() * n];
        for (j, g) in gt.iter().enumerate() {
            for (w, p) in boxes.iter().enumerate() {
                let d = ((g.center[0] - p.center[0]).powi(2)
                    + (g.center[1] - p.center[1]).powi(2))
                .sqrt();
                cost[j * n + w] = d;
            }
        }
        let cost = Tensor::new(vec![gt.len(), n], cost)?;
        let assignment = hungarian_match(&cost)?;
        let ego_pose = scenario.ego_pose(frame);
        for (agent, &query) in assignment.iter().enumerate() {
            let Some(future) = scenario.agent_future(agent, frame, cfg.plan_horizon) else {
                continue;
            };
            // ground truth into world frame
            let track = &scenario.agents[agent];
            let s = &track.states[frame];
            let gt_world =
                crate::geometry::to_world(&future, ([s.position[0], s.position[1]], s.yaw));
            // prediction into world frame through the predicted box pose
            let (modes_id, _) = model.agent_modes(&mut tape, fwd.motion_raw, query)?;
            let pb = &boxes[query];
            let ego_to_world = |p: [f64; 2]| {
                crate::geometry::to_world(&[p], ego_pose)[0]
            };
            let center_world = ego_to_world([pb.center[0], pb.center[1]]);
            let yaw_world = normalize_angle(pb.yaw + ego_pose.1);
            let mode_vals = tape.value(modes_id).to_vec();
            let agent_frame_modes: Vec<Vec<[f64; 2]>> = (0..cfg.mode_count)
                .map(|m| {
                    mode_vals[m * 2 * cfg.plan_horizon..(m + 1) * 2 * cfg.plan_horizon]
                        .chunks(2)
                        .map(|c| [c[0], c[1]])
                        .collect()
                })
                .collect();
            let modes: Vec<Vec<[f64; 2]>> = agent_frame_modes
                .iter()
                .map(|pts| crate::geometry::to_world(pts, (center_world, yaw_world)))
                .collect();
            agent_predictions.push((modes, gt_world));
            agent_frame_predictions.push((agent_frame_modes, future));
        }
    }

    // ego plan selection
    let world = world_at(scenario, frame, cfg.plan_horizon);
    let ego_mode_vals = tape.value(fwd.ego_modes).to_vec();
    let ego_modes: Vec<Vec<[f64; 2]>> = (0..cfg.mode_count)
        .map(|m| {
            ego_mode_vals[m * 2 * cfg.plan_horizon..(m + 1) * 2 * cfg.plan_horizon]
                .chunks(2)
                .map(|c| [c[0], c[1]])
                .collect()
        })
        .collect();
    let logits = tape.value(fwd.ego_logits).to_vec();
    let mut ego_plan = crate::planner::TrajectorySet::new(ego_modes, logits)?;
    let mut selection = crate::planner::select(&mut ego_plan, &world, utility_weights)?;
    let mut infeasible = false;
    if selection.fallback {
        // no predicted mode survives the mask: fall back to the raw anchors
        let mut anchor_set = crate::planner::TrajectorySet::new(
            model.plan_anchors.anchors.clone(),
            vec![0.0; model.plan_anchors.count()],
        )?;
        let anchor_sel = crate::planner::select(&mut anchor_set, &world, utility_weights)?;
        if !anchor_sel.fallback {
            ego_plan = anchor_set;
            selection = anchor_sel;
        } else {
            infeasible = true;
        }
    }

    // feature snapshots for diagnostics
    let dd = cfg.fused_width();
    let d = cfg.embed_dim;
    let grab = |vals: &[f64], i: usize, w: usize| -> Result<Tensor> {
        Tensor::new(vec![w], vals[i * w..(i + 1) * w].to_vec())
    };
    let f_text_vals = tape.value(fwd.f_text).to_vec();
    let f_final_vals = tape.value(fwd.f_final).to_vec();
    let vision_vals = tape.value(fwd.vision_agg).to_vec();
    let text_vals = tape.value(fwd.text_feat).to_vec();
    let mut features_text = Vec::new();
    let mut features_vision_only = Vec::new();
    let mut features_vision_agg = Vec::new();
    let mut features_text_embed = Vec::new();
    for i in 0..n {
        features_text.push(grab(&f_text_vals, i, dd)?);
        features_vision_only.push(grab(&f_final_vals, i, dd)?);
        features_vision_agg.push(grab(&vision_vals, i, d)?);
        features_text_embed.push(Tensor::new(vec![dd], text_vals.clone())?);
    }

    Ok(ScenarioEval {
        instances,
        agent_predictions,
        agent_frame_predictions,
        ego_plan,
        selection,
        infeasible,
        features_text,
        features_vision_only,
        features_vision_agg,
        features_text_embed,
    })
}

impl Model {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let stored = self.serializable()?;
        let refs: Vec<(String, &Tensor)> =
            stored.iter().map(|(n, t)| (n.clone(), t)).collect();
        crate::numeric::save_params(path, &refs)
    }

    pub fn load(cfg: ModelConfig, seed: u64, path: &std::path::Path) -> Result<Model> {
        let mut model = Model::new(cfg, seed)?;
        let stored = crate::numeric::load_params(path)?;
        model.load_values(&stored)?;
        Ok(model)
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let count: usize = self.params().iter().map(|(_, t)| t.len()).sum();
        write!(f, "Model({} parameters)", count)
    }
}

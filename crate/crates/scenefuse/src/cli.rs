//! Command entry points: scenario generation, toy training, evaluation,
//! the trajectory-mode ablation sweep, and information diagnostics. The
//! `scenefuse` binary wires these to subcommands; the functions are plain
//! library calls so tests and examples drive them directly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{require, Error, Result};
use crate::infotheory::{diagnostics, discretize_features, mutual_information, Axis};
use crate::losses::min_ade_mode;
use crate::metrics::{
    collision_flags, metrics_csv, min_ade_fde, planning_l2, MetricsRow, PlanEvalConfig,
};
use crate::model::{
    evaluate_scenario, fit_anchors, gt_boxes_ego, timeline_at, training_loss, Model, Trainer,
};
use crate::numeric::Tensor;
use crate::simulator::{generate_scenario, load_scenario, save_scenario, Scenario};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Generates `scenario_count` scenarios under `scenario_dir`, printing one
/// invariant-check line per scenario.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    ensure_dir(&cfg.scenario_dir)?;
    let spec = cfg.gen_spec();
    let mut paths = Vec::new();
    for i in 0..cfg.scenario_count {
        let seed = cfg.seed + i as u64;
        let scenario = generate_scenario(seed, &spec)?;
        scenario.check_invariants()?;
        let path = cfg.scenario_dir.join(format!("{}.txt", scenario.id));
        save_scenario(&path, &scenario)?;
        println!(
            "{}: agents={} steps={} invariants=ok",
            scenario.id,
            scenario.agents.len(),
            scenario.duration
        );
        paths.push(path);
    }
    Ok(paths)
}

/// Loads every scenario file in a directory, sorted by file name. An
/// empty directory yields an empty set.
pub fn load_scenarios(dir: &Path) -> Result<Vec<Scenario>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    files.iter().map(|p| load_scenario(p)).collect()
}

/// Frames of a scenario usable for a training or evaluation window.
pub fn usable_frames(scenario: &Scenario, history: usize, horizon: usize) -> Vec<usize> {
    (history..scenario.duration.saturating_sub(horizon))
        .collect()
}

#[derive(Debug)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub curve_path: PathBuf,
    pub params_path: PathBuf,
}

/// Gradient descent on the multi-task loss over the stored scenarios;
/// writes the parameter file and a loss-curve CSV. Deterministic for a
/// fixed (config, seed).
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let scenarios = load_scenarios(&cfg.scenario_dir).map_err(|e| match e {
        Error::Io { path, .. } => {
            Error::config(format!("missing scenarios under {}", path.display()))
        }
        other => other,
    })?;
    require(!scenarios.is_empty(), "training needs at least one scenario")
        .map_err(|e| Error::config(e.to_string()))?;
    ensure_dir(&cfg.out_dir)?;

    let mut model = Model::new(cfg.model_config(), cfg.seed)?;
    fit_anchors(&mut model, &scenarios, cfg.seed)?;

    let mcfg = model.cfg.clone();
    let schedule: Vec<(usize, usize)> = {
        let mut out = Vec::new();
        for (si, s) in scenarios.iter().enumerate() {
            for f in usable_frames(s, mcfg.history, mcfg.plan_horizon) {
                out.push((si, f));
            }
        }
        require(!out.is_empty(), "no usable training frames")?;
        out
    };

    let mut curve = String::from("step,total,detection,map,depth,motion,planning\n");
    let mut initial = 0.0;
    let mut last = 0.0;
    if cfg.train_steps == 0 {
        // parameters stay at initialization; record the starting loss
        let (si, f) = schedule[0];
        let (_, _, _, b) = training_loss(&model, &scenarios[si], f, &cfg.loss_weights)?;
        initial = b.total;
        last = b.total;
    } else {
        let mut trainer = Trainer::new(model, cfg.loss_weights, cfg.learning_rate);
        for step in 0..cfg.train_steps {
            let batch: Vec<(&Scenario, usize)> = (0..cfg.batch_size)
                .map(|k| {
                    let (si, f) = schedule[(step * cfg.batch_size + k) % schedule.len()];
                    (&scenarios[si], f)
                })
                .collect();
            let b = trainer.step_batch(&batch)?;
            if step == 0 {
                initial = b.total;
            }
            last = b.total;
            writeln!(
                curve,
                "{step},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                b.total, b.detection, b.map, b.depth, b.motion, b.planning
            )
            .unwrap();
        }
        model = trainer.into_model();
    }

    let curve_path = cfg.out_dir.join("loss_curve.csv");
    std::fs::write(&curve_path, &curve).map_err(|e| Error::io(&curve_path, e))?;
    if let Some(parent) = cfg.params_path.parent() {
        ensure_dir(parent)?;
    }
    model.save(&cfg.params_path)?;
    println!(
        "trained {} steps: loss {:.4} -> {:.4} (ratio {:.3})",
        cfg.train_steps,
        initial,
        last,
        if initial > 0.0 { last / initial } else { 0.0 }
    );
    Ok(TrainReport {
        initial_loss: initial,
        final_loss: last,
        curve_path,
        params_path: cfg.params_path.clone(),
    })
}

/// Feature snapshots for the information diagnostics, pooled over frames.
fn collect_features(
    model: &Model,
    scenarios: &[Scenario],
    frames_per_scenario: usize,
    utility: &crate::planner::UtilityWeights,
) -> Result<(Vec<Tensor>, Vec<Tensor>, Vec<Tensor>, Vec<Tensor>)> {
    let mut b_text = Vec::new();
    let mut b_vision = Vec::new();
    let mut vision = Vec::new();
    let mut text = Vec::new();
    for s in scenarios {
        let frames = usable_frames(s, model.cfg.history, model.cfg.plan_horizon);
        for &f in frames.iter().take(frames_per_scenario) {
            let eval = evaluate_scenario(model, s, f, utility)?;
            b_text.extend(eval.features_text);
            b_vision.extend(eval.features_vision_only);
            vision.extend(eval.features_vision_agg);
            text.extend(eval.features_text_embed);
        }
    }
    Ok((b_text, b_vision, vision, text))
}

#[derive(Debug)]
pub struct EvalReport {
    pub rows: Vec<MetricsRow>,
    pub csv: String,
    pub csv_path: PathBuf,
}

/// Evaluates the stored model on every scenario in `scenario_dir`: one
/// metrics row and one BEV plot per scenario, plus the aggregate row.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let scenarios = load_scenarios(&cfg.scenario_dir)?;
    require(
        cfg.params_path.exists(),
        format!("parameter file {} does not exist", cfg.params_path.display()),
    )
    .map_err(|e| Error::config(e.to_string()))?;
    let model = Model::load(cfg.model_config(), cfg.seed, &cfg.params_path)?;
    ensure_dir(&cfg.out_dir)?;
    let eval_cfg = cfg.eval_config();

    let mut rows = Vec::new();
    for scenario in &scenarios {
        let row = eval_one(&model, scenario, cfg, &eval_cfg, true)?;
        rows.push(row);
    }
    let csv = metrics_csv(&rows, &eval_cfg);
    let csv_path = cfg.out_dir.join("metrics.csv");
    std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
    println!("evaluated {} scenarios -> {}", scenarios.len(), csv_path.display());
    Ok(EvalReport { rows, csv, csv_path })
}

/// One scenario evaluated at its first usable frame.
pub fn eval_one(
    model: &Model,
    scenario: &Scenario,
    cfg: &RunConfig,
    eval_cfg: &PlanEvalConfig,
    write_plot: bool,
) -> Result<MetricsRow> {
    let frames = usable_frames(scenario, model.cfg.history, model.cfg.plan_horizon);
    require(!frames.is_empty(), format!("scenario {} has no usable frame", scenario.id))?;
    let frame = frames[0];
    let eval = evaluate_scenario(model, scenario, frame, &cfg.utility)?;

    // prediction metrics over agents
    let (mut ade_sum, mut fde_sum, mut misses, mut count) = (0.0, 0.0, 0usize, 0usize);
    for (modes, gt) in &eval.agent_predictions {
        let m = min_ade_fde(modes, gt)?;
        ade_sum += m.min_ade;
        fde_sum += m.min_fde;
        if m.min_fde > eval_cfg.miss_threshold {
            misses += 1;
        }
        count += 1;
    }
    let (min_ade, min_fde, miss) = if count > 0 {
        (ade_sum / count as f64, fde_sum / count as f64, misses as f64 / count as f64)
    } else {
        (0.0, 0.0, 0.0)
    };

    // planning metrics on the selected plan
    let plan = &eval.ego_plan.modes[eval.selection.index];
    let gt_plan = scenario
        .ego_future(frame, model.cfg.plan_horizon)
        .ok_or_else(|| Error::contract("scenario too short for the plan horizon"))?;
    let (l2, l2_avg) = planning_l2(plan, &gt_plan, eval_cfg)?;
    let timeline = timeline_at(scenario, frame, model.cfg.plan_horizon);
    let collision =
        collision_flags(plan, scenario.ego_pose(frame), &timeline, eval_cfg, true)?;

    // per-scenario information diagnostics over this frame's features
    let diags = {
        let b: Vec<&Tensor> = eval.features_text.iter().collect();
        let i: Vec<&Tensor> = eval.features_vision_agg.iter().collect();
        let t: Vec<&Tensor> = eval.features_text_embed.iter().collect();
        if b.len() >= cfg.mi_bins {
            let table = discretize_features(&b, &i, &t, cfg.mi_bins)?;
            Some(diagnostics(&table)?)
        } else {
            None
        }
    };

    if write_plot {
        let svg = crate::plot::bev_svg(
            scenario,
            frame,
            &model.plan_anchors.anchors,
            plan,
            &gt_plan,
        );
        let path = cfg.out_dir.join(format!("{}.svg", scenario.id));
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    }

    Ok(MetricsRow {
        scenario: scenario.id.clone(),
        min_ade,
        min_fde,
        miss,
        l2,
        l2_avg,
        collision,
        diagnostics: diags,
    })
}

/// Ablation over trajectory-mode counts: retrains per count and emits one
/// row per count with the L2 and collision-rate columns.
pub fn cmd_ablate_modes(cfg: &RunConfig, mode_counts: &[usize]) -> Result<(PathBuf, String)> {
    cfg.validate()?;
    require(!mode_counts.is_empty(), "needs at least one mode count")
        .map_err(|e| Error::config(e.to_string()))?;
    let scenarios = load_scenarios(&cfg.scenario_dir)?;
    require(!scenarios.is_empty(), "the ablation needs at least one scenario")
        .map_err(|e| Error::config(e.to_string()))?;
    ensure_dir(&cfg.out_dir)?;
    let eval_cfg = cfg.eval_config();
    require(
        eval_cfg.horizons.len() == 3,
        "the ablation table expects exactly three horizons",
    )?;

    let mut table = String::from(
        "mode_count,l2_1s,l2_2s,l2_3s,l2_avg,cr_1s,cr_2s,cr_3s,cr_avg\n",
    );
    for &m in mode_counts {
        let mut sub = cfg.clone();
        sub.mode_count = m;
        let mut model = Model::new(sub.model_config(), sub.seed)?;
        fit_anchors(&mut model, &scenarios, sub.seed)?;
        let mut trainer = Trainer::new(model, sub.loss_weights, sub.learning_rate);
        let mcfg = trainer.model.cfg.clone();
        let schedule: Vec<(usize, usize)> = scenarios
            .iter()
            .enumerate()
            .flat_map(|(si, s)| {
                usable_frames(s, mcfg.history, mcfg.plan_horizon)
                    .into_iter()
                    .map(move |f| (si, f))
            })
            .collect();
        for step in 0..sub.train_steps {
            let batch: Vec<(&Scenario, usize)> = (0..sub.batch_size)
                .map(|k| {
                    let (si, f) = schedule[(step * sub.batch_size + k) % schedule.len()];
                    (&scenarios[si], f)
                })
                .collect();
            trainer.step_batch(&batch)?;
        }
        let model = trainer.into_model();

        let mut l2 = vec![0.0; 3];
        let mut l2_avg = 0.0;
        let mut cr = vec![0.0; 3];
        for scenario in &scenarios {
            let row = eval_one(&model, scenario, &sub, &eval_cfg, false)?;
            for k in 0..3 {
                l2[k] += row.l2[k];
                cr[k] += row.collision[k] as u8 as f64;
            }
            l2_avg += row.l2_avg;
        }
        let n = scenarios.len() as f64;
        for v in l2.iter_mut() {
            *v /= n;
        }
        l2_avg /= n;
        let cr_pct: Vec<f64> = cr.iter().map(|c| 100.0 * c / n).collect();
        let cr_avg = cr_pct.iter().sum::<f64>() / 3.0;
        writeln!(
            table,
            "{m},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            l2[0], l2[1], l2[2], l2_avg, cr_pct[0], cr_pct[1], cr_pct[2], cr_avg
        )
        .unwrap();
        println!("mode_count={m}: avg L2 {:.3} m, avg CR {:.2}%", l2_avg, cr_avg);
    }
    let path = cfg.out_dir.join("mode_ablation.csv");
    std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    Ok((path, table))
}

#[derive(Debug)]
pub struct MiReport {
    /// I(B;I), I(B;T|I), H(B|I,T), interaction for text-fused features.
    pub fused: [f64; 4],
    /// Joint mutual information for text-fused vs vision-only features.
    pub joint_fused: f64,
    pub joint_vision_only: f64,
    pub csv_path: PathBuf,
}

/// Pools features over all scenarios and frames, reports the diagnostic
/// quantities, and compares text-fused against vision-only instance
/// features (directional check, reported rather than asserted).
pub fn cmd_diagnose_mi(cfg: &RunConfig) -> Result<MiReport> {
    cfg.validate()?;
    let scenarios = load_scenarios(&cfg.scenario_dir)?;
    require(!scenarios.is_empty(), "the diagnostics need at least one scenario")
        .map_err(|e| Error::config(e.to_string()))?;
    require(
        cfg.params_path.exists(),
        format!("parameter file {} does not exist", cfg.params_path.display()),
    )
    .map_err(|e| Error::config(e.to_string()))?;
    let model = Model::load(cfg.model_config(), cfg.seed, &cfg.params_path)?;
    ensure_dir(&cfg.out_dir)?;

    let (b_text, b_vision, vision, text) =
        collect_features(&model, &scenarios, 3, &cfg.utility)?;
    fn refs(v: &[Tensor]) -> Vec<&Tensor> {
        v.iter().collect()
    }
    let table_fused =
        discretize_features(&refs(&b_text), &refs(&vision), &refs(&text), cfg.mi_bins)?;
    let table_vision =
        discretize_features(&refs(&b_vision), &refs(&vision), &refs(&text), cfg.mi_bins)?;
    let fused = diagnostics(&table_fused)?;
    let joint_fused = mutual_information(&table_fused, &[Axis::I, Axis::T])?;
    let joint_vision_only = mutual_information(&table_vision, &[Axis::I, Axis::T])?;

    let mut csv = String::from("features,i_bi,i_bt_given_i,h_b_given_it,interaction,i_b_it\n");
    let vision_diag = diagnostics(&table_vision)?;
    writeln!(
        csv,
        "text_fused,{:.6},{:.6},{:.6},{:.6},{:.6}",
        fused[0], fused[1], fused[2], fused[3], joint_fused
    )
    .unwrap();
    writeln!(
        csv,
        "vision_only,{:.6},{:.6},{:.6},{:.6},{:.6}",
        vision_diag[0], vision_diag[1], vision_diag[2], vision_diag[3], joint_vision_only
    )
    .unwrap();
    let csv_path = cfg.out_dir.join("diagnostics.csv");
    std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
    println!(
        "I(B;I,T) fused {:.4} nats vs vision-only {:.4} nats ({})",
        joint_fused,
        joint_vision_only,
        if joint_fused >= joint_vision_only { "fusion adds information" } else { "no gain on this batch" }
    );
    Ok(MiReport { fused, joint_fused, joint_vision_only, csv_path })
}

/// Replays the trained planner through a scenario and writes the decision
/// log (one line-delimited record per step).
pub fn write_decision_log(records: &[crate::planner::ReplanRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Min-ADE helper re-exported for examples that inspect mode choices.
pub fn best_mode(modes: &[Vec<[f64; 2]>], gt: &[[f64; 2]]) -> Result<usize> {
    min_ade_mode(modes, gt).map(|(m, _)| m)
}

/// Quick textual summary of the detections of one evaluation.
pub fn detection_summary(model: &Model, scenario: &Scenario, frame: usize) -> Result<String> {
    let eval = evaluate_scenario(model, scenario, frame, &crate::planner::UtilityWeights::default())?;
    let gt = gt_boxes_ego(scenario, frame);
    Ok(format!(
        "{}: {} ground-truth agents, {} retained instances, {} feasible plan modes",
        scenario.id,
        gt.len(),
        eval.instances.len(),
        eval.selection.feasible.iter().filter(|&&f| f).count()
    ))
}

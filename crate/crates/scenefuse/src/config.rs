//! Run configuration: flat key-value text with section headers. Every key
//! mirrors one `RunConfig` field; unknown keys fail fast. All fields are
//! validated against module preconditions at load time.

use std::path::{Path, PathBuf};

use crate::error::{require, Error, Result};
use crate::losses::LossWeights;
use crate::metrics::PlanEvalConfig;
use crate::model::ModelConfig;
use crate::planner::UtilityWeights;
use crate::simulator::{GenSpec, RigConfig};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario_dir: PathBuf,
    pub params_path: PathBuf,
    pub out_dir: PathBuf,

    // model
    pub embed_dim: usize,
    pub text_dim: usize,
    pub query_grid: (usize, usize, usize),
    pub points: usize,
    pub views: usize,
    pub channels: usize,
    pub history: usize,
    pub mode_count: usize,
    pub plan_horizon: usize,
    pub score_threshold: f64,

    // simulator
    pub cars: usize,
    pub pedestrians: usize,
    pub duration: usize,
    pub scenario_count: usize,
    pub eval_count: usize,

    // training
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_weights: LossWeights,

    // planner
    pub utility: UtilityWeights,

    // evaluation
    pub horizons: Vec<f64>,
    pub miss_threshold: f64,
    pub ego_half_extents: [f64; 2],
    pub mi_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            scenario_dir: PathBuf::from("out/scenarios"),
            params_path: PathBuf::from("out/model.omsk"),
            out_dir: PathBuf::from("out"),
            embed_dim: 8,
            text_dim: 16,
            query_grid: (4, 4, 2),
            points: 4,
            views: 3,
            channels: 8,
            history: 3,
            mode_count: 6,
            plan_horizon: 6,
            score_threshold: 0.3,
            cars: 3,
            pedestrians: 1,
            duration: 12,
            scenario_count: 25,
            eval_count: 10,
            train_steps: 200,
            batch_size: 4,
            learning_rate: 2e-2,
            loss_weights: LossWeights::default(),
            utility: UtilityWeights::default(),
            horizons: vec![1.0, 2.0, 3.0],
            miss_threshold: 2.0,
            ego_half_extents: [2.04, 0.92],
            mi_bins: 4,
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            text_dim: self.text_dim,
            query_grid: self.query_grid,
            points: self.points,
            views: self.views,
            channels: self.channels,
            history: self.history,
            mode_count: self.mode_count,
            plan_horizon: self.plan_horizon,
            score_threshold: self.score_threshold,
            ..ModelConfig::default()
        }
    }

    pub fn gen_spec(&self) -> GenSpec {
        let mut rig = RigConfig::desk(self.channels);
        rig.views = self.views;
        GenSpec {
            cars: self.cars,
            pedestrians: self.pedestrians,
            duration: self.duration,
            rig,
        }
    }

    pub fn eval_config(&self) -> PlanEvalConfig {
        PlanEvalConfig {
            horizons: self.horizons.clone(),
            step_period: crate::simulator::STEP_PERIOD,
            ego_half_extents: self.ego_half_extents,
            miss_threshold: self.miss_threshold,
        }
    }

    /// Field validation against module preconditions; failures surface as
    /// configuration errors (exit code 1).
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| Error::config(e.to_string());
        self.model_config().validate().map_err(as_config)?;
        self.loss_weights.validate().map_err(as_config)?;
        self.utility.validate().map_err(as_config)?;
        self.eval_config().validate().map_err(as_config)?;
        require(self.duration >= self.history + self.plan_horizon + 1, {
            format!(
                "duration {} too short for history {} plus horizon {}",
                self.duration, self.history, self.plan_horizon
            )
        })
        .map_err(as_config)?;
        require(self.mi_bins >= 2, "mi_bins must be at least 2").map_err(as_config)?;
        require(self.batch_size >= 1, "batch_size must be at least 1").map_err(as_config)?;
        require(self.learning_rate.is_finite() && self.learning_rate >= 0.0, "bad learning rate")
            .map_err(as_config)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].to_string();
                continue;
            }
            let (key, value) = line.split_once('=').map(|(k, v)| (k.trim(), v.trim())).ok_or_else(
                || Error::config(format!("line {}: expected key = value", lineno + 1)),
            )?;
            cfg.apply(&section, key, value).map_err(|e| match e {
                Error::Config(m) => Error::config(format!("line {}: {m}", lineno + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let bad = || Error::config(format!("bad value for {section}.{key}: {value}"));
        let as_u64 = |v: &str| v.parse::<u64>().map_err(|_| bad());
        let as_usize = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let as_f64 = |v: &str| v.parse::<f64>().map_err(|_| bad());
        match (section, key) {
            ("run", "seed") => self.seed = as_u64(value)?,
            ("run", "scenario_dir") => self.scenario_dir = PathBuf::from(value),
            ("run", "params_path") => self.params_path = PathBuf::from(value),
            ("run", "out_dir") => self.out_dir = PathBuf::from(value),
            ("model", "embed_dim") => self.embed_dim = as_usize(value)?,
            ("model", "text_dim") => self.text_dim = as_usize(value)?,
            ("model", "query_grid") => {
                let parts: Vec<usize> = value
                    .split_whitespace()
                    .map(as_usize)
                    .collect::<Result<_>>()?;
                require(parts.len() == 3, "query_grid needs three extents")?;
                self.query_grid = (parts[0], parts[1], parts[2]);
            }
            ("model", "points") => self.points = as_usize(value)?,
            ("model", "views") => self.views = as_usize(value)?,
            ("model", "channels") => self.channels = as_usize(value)?,
            ("model", "history") => self.history = as_usize(value)?,
            ("model", "mode_count") => self.mode_count = as_usize(value)?,
            ("model", "plan_horizon") => self.plan_horizon = as_usize(value)?,
            ("model", "score_threshold") => self.score_threshold = as_f64(value)?,
            ("simulator", "cars") => self.cars = as_usize(value)?,
            ("simulator", "pedestrians") => self.pedestrians = as_usize(value)?,
            ("simulator", "duration") => self.duration = as_usize(value)?,
            ("simulator", "scenario_count") => self.scenario_count = as_usize(value)?,
            ("simulator", "eval_count") => self.eval_count = as_usize(value)?,
            ("train", "steps") => self.train_steps = as_usize(value)?,
            ("train", "batch_size") => self.batch_size = as_usize(value)?,
            ("train", "learning_rate") => self.learning_rate = as_f64(value)?,
            ("train", "lambda_det_c") => self.loss_weights.det_c = as_f64(value)?,
            ("train", "lambda_det_r") => self.loss_weights.det_r = as_f64(value)?,
            ("train", "lambda_map_c") => self.loss_weights.map_c = as_f64(value)?,
            ("train", "lambda_map_r") => self.loss_weights.map_r = as_f64(value)?,
            ("train", "lambda_depth") => self.loss_weights.depth = as_f64(value)?,
            ("train", "lambda_motion_c") => self.loss_weights.motion_c = as_f64(value)?,
            ("train", "lambda_motion_r") => self.loss_weights.motion_r = as_f64(value)?,
            ("train", "lambda_plan_c") => self.loss_weights.plan_c = as_f64(value)?,
            ("train", "lambda_plan_r") => self.loss_weights.plan_r = as_f64(value)?,
            ("train", "lambda_plan_status") => self.loss_weights.plan_status = as_f64(value)?,
            ("train", "focal_alpha") => self.loss_weights.focal_alpha = as_f64(value)?,
            ("train", "focal_gamma") => self.loss_weights.focal_gamma = as_f64(value)?,
            ("planner", "alpha_progress") => self.utility.progress = as_f64(value)?,
            ("planner", "alpha_comfort") => self.utility.comfort = as_f64(value)?,
            ("planner", "alpha_risk") => self.utility.risk = as_f64(value)?,
            ("planner", "alpha_compliance") => self.utility.compliance = as_f64(value)?,
            ("eval", "horizons") => {
                self.horizons =
                    value.split_whitespace().map(as_f64).collect::<Result<_>>()?;
            }
            ("eval", "miss_threshold") => self.miss_threshold = as_f64(value)?,
            ("eval", "ego_half_length") => self.ego_half_extents[0] = as_f64(value)?,
            ("eval", "ego_half_width") => self.ego_half_extents[1] = as_f64(value)?,
            ("eval", "mi_bins") => self.mi_bins = as_usize(value)?,
            _ => return Err(Error::config(format!("unknown key {section}.{key}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parse_overrides_and_comments() {
        let text = "\
# toy run
[run]
seed = 42

[model]
mode_count = 3
plan_horizon = 4

[simulator]
duration = 10

[eval]
horizons = 0.5 1.0 2.0
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.mode_count, 3);
        assert_eq!(cfg.horizons, vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn unknown_keys_fail_fast() {
        let err = RunConfig::parse("[model]\nwidth = 9\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("[model]\nscore_threshold = 1.5\n").is_err());
        assert!(RunConfig::parse("[simulator]\nduration = 3\n").is_err());
        assert!(RunConfig::parse("[eval]\nhorizons = 2.0 1.0\n").is_err());
    }
}

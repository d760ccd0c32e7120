//! Experiment configuration: one TOML document with a `[run]` table and
//! optional override tables for every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wvn_core::graphs::GraphConfig;
use wvn_core::learner::TrainerConfig;
use wvn_core::navstack::{CarrotConfig, PlannerConfig, DEFAULT_ALPHA};
use wvn_core::robot::{DriverConfig, RobotConfig};
use wvn_core::supervision::ScoreConfig;
use wvn_core::world::{CameraConfig, SegmentationConfig};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Demo,
    Navigate,
    Follow,
    Ablate,
    Eval,
    Serve,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Demo => "demo",
            RunMode::Navigate => "navigate",
            RunMode::Follow => "follow",
            RunMode::Ablate => "ablate",
            RunMode::Eval => "eval",
            RunMode::Serve => "serve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// World file path (relative to the config file) or `builtin:<name>`.
    pub world: String,
    pub seed: u64,
    pub mode: RunMode,
    /// Training-step budget.
    pub steps: usize,
    /// Fraction of training nodes used, in (0, 1].
    pub fraction: f64,
    pub out_dir: PathBuf,
    pub deterministic: bool,
    /// Training steps interleaved per simulation tick.
    pub train_per_tick: usize,
    /// Training steps between validation evaluations; 0 disables.
    pub eval_every: usize,
    /// Ticks between map dumps; 0 disables.
    pub dump_every: usize,
    /// Fraction of the demonstration route, from its end, used for validation.
    pub val_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: "builtin:park".into(),
            seed: 0,
            mode: RunMode::Demo,
            steps: 1000,
            fraction: 1.0,
            out_dir: PathBuf::from("runs/out"),
            deterministic: true,
            train_per_tick: 1,
            eval_every: 50,
            dump_every: 0,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostmapSource {
    Learned,
    /// Costmap from binarized ground truth; for tests and baselines.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavConfig {
    pub alpha: f64,
    pub median_radius: usize,
    pub planner: PlannerConfig,
    pub carrot: CarrotConfig,
    pub goal_radius: f64,
    /// Seconds allowed per goal.
    pub goal_timeout: f64,
    /// Keep training while driving autonomously.
    pub learn_online: bool,
    /// Rotate in place once before autonomous driving to populate the map.
    pub spin_up: bool,
    pub costmap: CostmapSource,
    /// Ticks driven in follow mode.
    pub follow_steps: usize,
    /// Class counted as on-path for follow adherence.
    pub path_class: String,
    /// Slope limit of the geometric baseline, metres per metre.
    pub slope_max: f64,
    /// Goals override; empty uses the world's goals.
    pub goals: Vec<[f64; 2]>,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            median_radius: 1,
            planner: PlannerConfig::default(),
            carrot: CarrotConfig::default(),
            goal_radius: 0.5,
            goal_timeout: 90.0,
            learn_online: true,
            spin_up: true,
            costmap: CostmapSource::Learned,
            follow_steps: 600,
            path_class: "path".into(),
            slope_max: 1.0,
            goals: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub seeds: usize,
    pub modes: Vec<wvn_core::learner::Mode>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { seeds: 5, modes: wvn_core::learner::Mode::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub split: wvn_core::graphs::Split,
    /// GT accuracy (percent) below which `eval` reports failure.
    pub min_gt_accuracy: f64,
    /// Worlds for the cross-world matrix; empty skips it.
    pub cross_worlds: Vec<String>,
    /// Run the adaptation-speed study.
    pub speed_study: bool,
    pub fractions: Vec<f64>,
    /// Training steps between evaluations in the speed study.
    pub eval_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            split: wvn_core::graphs::Split::Val,
            min_gt_accuracy: 90.0,
            cross_worlds: Vec::new(),
            speed_study: false,
            fractions: (1..=10).map(|i| i as f64 / 10.0).collect(),
            eval_stride: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub snapshot_hz: f64,
    /// Wall-clock ticks per second; the simulation dt stays fixed.
    pub tick_hz: f64,
    /// Stop after this many ticks; 0 runs until interrupted.
    pub max_ticks: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { host: "127.0.0.1".into(), port: 8090, snapshot_hz: 10.0, tick_hz: 10.0, max_ticks: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub learner: TrainerConfig,
    pub graphs: GraphConfig,
    pub robot: RobotConfig,
    pub driver: DriverConfig,
    pub score: ScoreConfig,
    pub camera: CameraConfig,
    pub segmentation: SegmentationConfig,
    pub nav: NavConfig,
    pub ablate: AblateConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")).to_path_buf())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if !(self.run.fraction > 0.0 && self.run.fraction <= 1.0) {
            return bad("run.fraction must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.run.val_fraction) {
            return bad("run.val_fraction must lie in [0, 1)");
        }
        if self.ablate.seeds == 0 {
            return bad("ablate.seeds must be positive");
        }
        if self.eval.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return bad("eval.fractions must lie in (0, 1]");
        }
        if !(self.serve.snapshot_hz > 0.0 && self.serve.tick_hz > 0.0) {
            return bad("serve.snapshot_hz and serve.tick_hz must be positive");
        }
        if !(self.nav.alpha > 0.0 && self.nav.alpha <= 1.0) {
            return bad("nav.alpha must lie in (0, 1]");
        }
        self.learner.validate().map_err(HarnessError::from)?;
        if !self.run.world.starts_with("builtin:") && !self.resolve(&self.run.world).exists() {
            return Err(HarnessError::Config(format!("world file {} does not exist", self.run.world)));
        }
        if let Some(ck) = &self.eval.checkpoint {
            if self.run.mode == RunMode::Eval && !self.resolve(ck).exists() {
                return Err(HarnessError::Config(format!("checkpoint {} does not exist", ck.display())));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: impl AsRef<Path>) -> PathBuf {
        let p = p.as_ref();
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.run.out_dir)
    }
}

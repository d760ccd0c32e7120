//! Experiment runners behind the CLI modes.
//!
//! The `*_phase` functions operate on an existing simulation and never touch
//! the filesystem; the `run_*` functions load the world, call the phases and
//! write artifacts.

use std::fs::File;
use std::io::BufReader;
use std::sync::mpsc::{self, TryRecvError};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use wvn_core::graphs::{MissionNode, Split};
use wvn_core::learner::{read_checkpoint, Mode, Predictor, TrainMetrics, Trainer, TrainerConfig};
use wvn_core::navstack::{plan_twist, sdf, smart_carrot, Costmap, PlanStatus};
use wvn_core::robot::{DriverOutput, ScriptedDriver, TwistCommand};
use wvn_core::world::WorldFile;

use crate::config::{CostmapSource, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::eval::{CurvePoint, EvalReport, EvalSet};
use crate::output::{MetricRow, RunDir};
use crate::sim::{RouteProgress, Simulation};
use crate::worlds;

/// Called after every deterministic training step.
pub type StepHook<'a> = &'a mut dyn FnMut(&Simulation, &Trainer, &TrainMetrics);

/// Mission nodes are re-sent to a threaded learner at most this often.
const SNAPSHOT_EVERY_TICKS: u64 = 10;

#[derive(Debug)]
pub struct DemoOutcome {
    pub sim: Simulation,
    pub trainer: Trainer,
    pub rows: Vec<MetricRow>,
    pub report: EvalReport,
    /// Waypoint the scripted driver failed on, if any.
    pub failed_waypoint: Option<usize>,
}

fn trainer_for(cfg: &ExperimentConfig, world: &WorldFile) -> Result<Trainer> {
    Ok(Trainer::new(cfg.learner.clone(), world.grid.embedding_dim(), cfg.run.seed)?)
}

fn load_checkpoint_trainer(cfg: &ExperimentConfig) -> Result<Option<Trainer>> {
    let Some(path) = &cfg.eval.checkpoint else {
        return Ok(None);
    };
    let path = cfg.resolve(path);
    let file = File::open(&path)
        .map_err(|e| HarnessError::Config(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let ckpt = read_checkpoint(BufReader::new(file))?;
    let mut learner = cfg.learner.clone();
    learner.mode = ckpt.predictor.mode;
    learner.hidden = ckpt.predictor.model.hidden_sizes();
    Ok(Some(Trainer::from_checkpoint(learner, ckpt, cfg.run.seed)?))
}

/// Keeps the validation evaluation set in step with a growing mission graph.
struct ValTracker {
    slope_max: f64,
    count: usize,
    set: Option<EvalSet>,
}

impl ValTracker {
    fn new(slope_max: f64) -> Self {
        Self { slope_max, count: 0, set: None }
    }

    fn accuracy(&mut self, world: &WorldFile, nodes: &[MissionNode], predictor: &Predictor) -> Result<Option<f64>> {
        let count = nodes.iter().filter(|n| n.split == Split::Val).count();
        if count == 0 {
            return Ok(None);
        }
        if count != self.count || self.set.is_none() {
            self.set = Some(EvalSet::build(&world.grid, nodes, Split::Val, self.slope_max)?);
            self.count = count;
        }
        Ok(Some(self.set.as_ref().expect("built above").gt_accuracy(predictor)?))
    }
}

fn wants_eval(cfg: &ExperimentConfig, step: u64) -> bool {
    cfg.run.eval_every > 0 && step % cfg.run.eval_every as u64 == 0
}

fn sim_ms(sim: &Simulation) -> u64 {
    (sim.time() * 1000.0).round() as u64
}

/// Drives the demonstration route while training. Deterministic mode
/// interleaves `train_per_tick` steps per tick; otherwise the learner runs on
/// its own thread. Any step budget left when the route ends is spent on the
/// collected data.
pub fn demo_phase(cfg: &ExperimentConfig, sim: &mut Simulation, trainer: &mut Trainer, hook: Option<StepHook>) -> Result<(Vec<MetricRow>, Option<usize>)> {
    if cfg.run.deterministic {
        demo_interleaved(cfg, sim, trainer, hook)
    } else {
        demo_threaded(cfg, sim, trainer)
    }
}

fn route_driver(cfg: &ExperimentConfig, sim: &Simulation) -> Result<(ScriptedDriver, RouteProgress)> {
    let route = sim
        .world
        .route
        .as_ref()
        .ok_or_else(|| HarnessError::Config(format!("world `{}` has no demonstration route", sim.world.name)))?;
    let wps = route.expanded();
    let pose = sim.pose();
    Ok((ScriptedDriver::new(wps.clone(), cfg.driver), RouteProgress::new((pose.x, pose.y), &wps)))
}

enum Drive {
    Go(TwistCommand),
    Done,
    Failed(usize),
}

fn drive(driver: &mut ScriptedDriver, progress: &RouteProgress, sim: &mut Simulation, val_start: f64) -> Drive {
    match driver.command(&sim.robot, &sim.robot_cfg) {
        DriverOutput::Finished => Drive::Done,
        DriverOutput::Failed { waypoint } => Drive::Failed(waypoint),
        DriverOutput::Command(c) => {
            sim.split = if progress.fraction(driver.current_index(), &sim.pose()) >= val_start {
                Split::Val
            } else {
                Split::Train
            };
            Drive::Go(c)
        }
    }
}

fn demo_interleaved(
    cfg: &ExperimentConfig,
    sim: &mut Simulation,
    trainer: &mut Trainer,
    mut hook: Option<StepHook>,
) -> Result<(Vec<MetricRow>, Option<usize>)> {
    let (mut driver, progress) = route_driver(cfg, sim)?;
    let val_start = 1.0 - cfg.run.val_fraction;
    let budget = cfg.run.steps as u64;
    let mut trained = 0u64;
    let mut rows = Vec::new();
    let mut val = ValTracker::new(cfg.nav.slope_max);
    let mut failed = None;

    let mut train = |sim: &Simulation, trainer: &mut Trainer, rows: &mut Vec<MetricRow>, hook: &mut Option<StepHook>| -> Result<bool> {
        let Some(m) = trainer.train_step(sim.graphs.mission.nodes()) else {
            return Ok(false);
        };
        trained += 1;
        let acc = if wants_eval(cfg, trained) {
            val.accuracy(&sim.world, sim.graphs.mission.nodes(), &trainer.snapshot())?
        } else {
            None
        };
        if let Some(h) = hook.as_mut() {
            h(sim, trainer, &m);
        }
        rows.push(MetricRow::new(&m, sim_ms(sim), acc));
        Ok(true)
    };

    loop {
        let cmd = match drive(&mut driver, &progress, sim, val_start) {
            Drive::Go(c) => c,
            Drive::Done => break,
            Drive::Failed(w) => {
                failed = Some(w);
                break;
            }
        };
        sim.step(cmd)?;
        for _ in 0..cfg.run.train_per_tick {
            if (rows.len() as u64) < budget {
                train(sim, trainer, &mut rows, &mut hook)?;
            }
        }
        if cfg.run.dump_every > 0 && sim.tick % cfg.run.dump_every as u64 == 0 {
            sim.observe(&trainer.snapshot())?;
        }
    }
    if failed.is_none() {
        while (rows.len() as u64) < budget {
            if !train(sim, trainer, &mut rows, &mut hook)? {
                break;
            }
        }
    }
    Ok((rows, failed))
}

fn demo_threaded(cfg: &ExperimentConfig, sim: &mut Simulation, trainer: &mut Trainer) -> Result<(Vec<MetricRow>, Option<usize>)> {
    let (mut driver, progress) = route_driver(cfg, sim)?;
    let val_start = 1.0 - cfg.run.val_fraction;
    let budget = cfg.run.steps as u64;
    let started = Instant::now();
    let world = sim.world.clone();

    std::thread::scope(|scope| {
        let (node_tx, node_rx) = mpsc::channel::<Arc<Vec<MissionNode>>>();
        let (pred_tx, pred_rx) = mpsc::channel::<Predictor>();
        let learner = &mut *trainer;
        let handle = scope.spawn(move || -> Result<Vec<MetricRow>> {
            let mut nodes: Arc<Vec<MissionNode>> = Arc::new(Vec::new());
            let mut rows = Vec::new();
            let mut val = ValTracker::new(cfg.nav.slope_max);
            let mut sim_done = false;
            while (rows.len() as u64) < budget {
                loop {
                    match node_rx.try_recv() {
                        Ok(n) => nodes = n,
                        Err(TryRecvError::Empty) => break,
                        Err(TryRecvError::Disconnected) => {
                            sim_done = true;
                            break;
                        }
                    }
                }
                match learner.train_step(&nodes) {
                    Some(m) => {
                        let step = rows.len() as u64 + 1;
                        let acc = if wants_eval(cfg, step) { val.accuracy(&world, &nodes, &learner.snapshot())? } else { None };
                        rows.push(MetricRow::new(&m, started.elapsed().as_millis() as u64, acc));
                        if step % 10 == 0 {
                            let _ = pred_tx.send(learner.snapshot());
                        }
                    }
                    None if sim_done => break,
                    None => match node_rx.recv() {
                        Ok(n) => nodes = n,
                        Err(_) => sim_done = true,
                    },
                }
            }
            Ok(rows)
        });

        let mut failed = None;
        let mut last_sent = 0u64;
        let mut dirty = false;
        let mut latest: Option<Predictor> = None;
        let result: Result<()> = (|| {
            loop {
                let cmd = match drive(&mut driver, &progress, sim, val_start) {
                    Drive::Go(c) => c,
                    Drive::Done => break,
                    Drive::Failed(w) => {
                        failed = Some(w);
                        break;
                    }
                };
                dirty |= sim.step(cmd)?.captured;
                if dirty && sim.tick - last_sent >= SNAPSHOT_EVERY_TICKS {
                    let _ = node_tx.send(Arc::new(sim.graphs.mission.nodes().to_vec()));
                    last_sent = sim.tick;
                    dirty = false;
                }
                while let Ok(p) = pred_rx.try_recv() {
                    latest = Some(p);
                }
                if cfg.run.dump_every > 0 && sim.tick % cfg.run.dump_every as u64 == 0 {
                    if let Some(p) = &latest {
                        sim.observe(p)?;
                    }
                }
            }
            let _ = node_tx.send(Arc::new(sim.graphs.mission.nodes().to_vec()));
            Ok(())
        })();
        drop(node_tx);
        let rows = handle.join().map_err(|_| HarnessError::Run("learner thread panicked".into()))??;
        result?;
        Ok((rows, failed))
    })
}

/// Re-predicts every mission frame with `predictor` and fuses the result.
pub fn fuse_mission(sim: &mut Simulation, predictor: &Predictor) -> Result<()> {
    for node in sim.graphs.mission.nodes() {
        let preds = predictor.predict(&node.frame)?;
        sim.map.fuse_prediction(&node.frame, &preds);
    }
    Ok(())
}

fn final_report(cfg: &ExperimentConfig, sim: &Simulation, predictor: &Predictor, rows: &[MetricRow]) -> Result<EvalReport> {
    let curve = rows
        .iter()
        .filter_map(|r| r.val_acc.map(|a| CurvePoint { step: r.step, gt_accuracy: a }))
        .collect();
    EvalSet::build(&sim.world.grid, sim.graphs.mission.nodes(), Split::Val, cfg.nav.slope_max)?.report(predictor, curve)
}

/// Demonstration phase plus final validation report, without artifacts.
pub fn demo(cfg: &ExperimentConfig, world: WorldFile, hook: Option<StepHook>) -> Result<DemoOutcome> {
    let mut trainer = trainer_for(cfg, &world)?;
    let mut sim = Simulation::new(cfg, world);
    let (rows, failed_waypoint) = demo_phase(cfg, &mut sim, &mut trainer, hook)?;
    let report = final_report(cfg, &sim, &trainer.snapshot(), &rows)?;
    Ok(DemoOutcome { sim, trainer, rows, report, failed_waypoint })
}

fn write_demo_artifacts(cfg: &ExperimentConfig, dir: &mut RunDir, out: &mut DemoOutcome) -> Result<()> {
    dir.write_metrics(&out.rows)?;
    dir.write_checkpoint(&out.trainer.checkpoint())?;
    dir.write_mission(&out.sim.graphs.mission, out.sim.world.grid.embedding_dim())?;
    dir.write_json("report.json", &out.report)?;
    let predictor = out.trainer.snapshot();
    fuse_mission(&mut out.sim, &predictor)?;
    let costmap = out.sim.learned_costmap(cfg.nav.median_radius, predictor.tau_thr);
    dir.dump_maps(out.sim.tick, &out.sim, &costmap)
}

/// `wvn demo`.
pub fn run_demo(cfg: &ExperimentConfig) -> Result<DemoOutcome> {
    let world = worlds::load(&cfg.run.world, cfg)?;
    let mut dir = RunDir::create(cfg.out_dir())?;
    let mut out = demo(cfg, world, None)?;
    write_demo_artifacts(cfg, &mut dir, &mut out)?;
    dir.write_manifest(
        cfg,
        serde_json::json!({
            "ticks": out.sim.tick,
            "train_steps": out.rows.len(),
            "gt_accuracy": out.report.gt_accuracy,
            "failed_waypoint": out.failed_waypoint,
        }),
    )?;
    match out.failed_waypoint {
        Some(waypoint) => Err(HarnessError::DriverFailed { waypoint }),
        None => Ok(out),
    }
}

/// Either a trainer resumed from `eval.checkpoint`, or a fresh demo phase.
fn prepare(cfg: &ExperimentConfig, world: WorldFile) -> Result<(Simulation, Trainer, Vec<MetricRow>, Option<usize>)> {
    if let Some(trainer) = load_checkpoint_trainer(cfg)? {
        return Ok((Simulation::new(cfg, world), trainer, Vec::new(), None));
    }
    let mut trainer = trainer_for(cfg, &world)?;
    let mut sim = Simulation::new(cfg, world);
    let (rows, failed) = demo_phase(cfg, &mut sim, &mut trainer, None)?;
    Ok((sim, trainer, rows, failed))
}

/// Per-tick perception for autonomous driving.
fn perceive(cfg: &ExperimentConfig, sim: &mut Simulation, predictor: &Predictor) -> Result<Costmap> {
    sim.observe(predictor)?;
    Ok(match cfg.nav.costmap {
        CostmapSource::Learned => sim.learned_costmap(cfg.nav.median_radius, predictor.tau_thr),
        CostmapSource::GroundTruth => sim.gt_costmap(),
    })
}

/// Rotates once in place while observing, so the map covers all bearings.
pub fn spin_up(sim: &mut Simulation, predictor: &Predictor) -> Result<()> {
    let rate = sim.robot_cfg.yaw_rate_max;
    let ticks = (std::f64::consts::TAU / (rate * sim.robot_cfg.dt)).ceil() as usize;
    for _ in 0..ticks {
        sim.observe(predictor)?;
        sim.step(TwistCommand::new(0.0, 0.0, rate))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoalResult {
    pub goal: [f64; 2],
    pub reached: bool,
    pub ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NavReport {
    pub goals: Vec<GoalResult>,
    pub reached: usize,
    /// Entries into cells blocked in the costmap the command was planned on.
    pub violations: usize,
    pub ticks: u64,
}

/// Closed-loop goal reaching on the learned costmap.
pub fn navigate_phase(cfg: &ExperimentConfig, sim: &mut Simulation, trainer: &mut Trainer, goals: &[(f64, f64)]) -> Result<NavReport> {
    sim.map.clear();
    sim.split = Split::Train;
    let mut predictor = trainer.snapshot();
    if cfg.nav.spin_up {
        spin_up(sim, &predictor)?;
    }
    let start_tick = sim.tick;
    let max_ticks = (cfg.nav.goal_timeout / sim.robot_cfg.dt).ceil() as u64;
    let mut results = Vec::with_capacity(goals.len());
    let mut violations = 0;
    for &(gx, gy) in goals {
        let t0 = sim.tick;
        let mut reached = (sim.pose().x - gx).hypot(sim.pose().y - gy) <= cfg.nav.goal_radius;
        while !reached && sim.tick - t0 < max_ticks {
            let costmap = perceive(cfg, sim, &predictor)?;
            let field = sdf(&costmap);
            let plan = plan_twist(&sim.pose(), (gx, gy), &costmap, &field, &cfg.nav.planner);
            let out = sim.step(plan.cmd)?;
            if out.entered_new_cell() && out.cell.is_none_or(|c| costmap.is_blocked(c)) {
                violations += 1;
            }
            if cfg.nav.learn_online {
                let mut trained = false;
                for _ in 0..cfg.run.train_per_tick {
                    trained |= trainer.train_step(sim.graphs.mission.nodes()).is_some();
                }
                if trained {
                    predictor = trainer.snapshot();
                }
            }
            reached = (sim.pose().x - gx).hypot(sim.pose().y - gy) <= cfg.nav.goal_radius;
        }
        results.push(GoalResult { goal: [gx, gy], reached, ticks: sim.tick - t0 });
    }
    Ok(NavReport {
        reached: results.iter().filter(|r| r.reached).count(),
        goals: results,
        violations,
        ticks: sim.tick - start_tick,
    })
}

fn goals_of(cfg: &ExperimentConfig, world: &WorldFile) -> Vec<(f64, f64)> {
    if cfg.nav.goals.is_empty() {
        world.goals.clone()
    } else {
        cfg.nav.goals.iter().map(|g| (g[0], g[1])).collect()
    }
}

#[derive(Debug)]
pub struct NavOutcome {
    pub sim: Simulation,
    pub trainer: Trainer,
    pub demo_rows: Vec<MetricRow>,
    pub report: NavReport,
}

/// `wvn navigate`.
pub fn run_navigate(cfg: &ExperimentConfig) -> Result<NavOutcome> {
    let world = worlds::load(&cfg.run.world, cfg)?;
    let goals = goals_of(cfg, &world);
    let mut dir = RunDir::create(cfg.out_dir())?;
    let (mut sim, mut trainer, demo_rows, failed) = prepare(cfg, world)?;
    dir.write_metrics(&demo_rows)?;
    if let Some(waypoint) = failed {
        dir.write_manifest(cfg, serde_json::json!({ "failed_waypoint": waypoint }))?;
        return Err(HarnessError::DriverFailed { waypoint });
    }
    let report = navigate_phase(cfg, &mut sim, &mut trainer, &goals)?;
    dir.write_json("navigate.json", &report)?;
    let predictor = trainer.snapshot();
    let costmap = sim.learned_costmap(cfg.nav.median_radius, predictor.tau_thr);
    dir.dump_maps(sim.tick, &sim, &costmap)?;
    dir.write_checkpoint(&trainer.checkpoint())?;
    dir.write_manifest(
        cfg,
        serde_json::json!({ "reached": report.reached, "goals": report.goals.len(), "violations": report.violations }),
    )?;
    Ok(NavOutcome { sim, trainer, demo_rows, report })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FollowReport {
    pub steps: usize,
    pub on_path: usize,
    pub adherence: f64,
    pub violations: usize,
    /// Distance driven, metres.
    pub distance: f64,
    /// The carrot found no free cell and the run ended early.
    pub carrot_failed: bool,
}

/// Smart-carrot driving with the learner frozen.
pub fn follow_phase(cfg: &ExperimentConfig, sim: &mut Simulation, predictor: &Predictor) -> Result<FollowReport> {
    let path_class = sim
        .world
        .grid
        .class_id(&cfg.nav.path_class)
        .ok_or_else(|| HarnessError::Config(format!("world has no class `{}`", cfg.nav.path_class)))?;
    sim.record = false;
    sim.map.clear();
    if cfg.nav.spin_up {
        spin_up(sim, predictor)?;
    }
    let geom = *sim.world.grid.geometry();
    let (mut steps, mut on_path, mut violations) = (0, 0, 0);
    let mut distance = 0.0;
    let mut carrot_failed = false;
    while steps < cfg.nav.follow_steps {
        let costmap = perceive(cfg, sim, predictor)?;
        let field = sdf(&costmap);
        let Some(carrot) = smart_carrot(&sim.pose(), &costmap, &field, &cfg.nav.carrot) else {
            carrot_failed = true;
            break;
        };
        let plan = plan_twist(&sim.pose(), geom.center(carrot), &costmap, &field, &cfg.nav.planner);
        if plan.status == PlanStatus::SafetyStop && steps == 0 && costmap.free_count() == 0 {
            carrot_failed = true;
            break;
        }
        let before = sim.pose();
        let out = sim.step(plan.cmd)?;
        distance += (sim.pose().x - before.x).hypot(sim.pose().y - before.y);
        steps += 1;
        if out.entered_new_cell() && out.cell.is_none_or(|c| costmap.is_blocked(c)) {
            violations += 1;
        }
        if out.cell.is_some_and(|c| sim.class_at(c) == path_class) {
            on_path += 1;
        }
    }
    let adherence = if steps == 0 { 0.0 } else { on_path as f64 / steps as f64 };
    Ok(FollowReport { steps, on_path, adherence, violations, distance, carrot_failed })
}

#[derive(Debug)]
pub struct FollowOutcome {
    pub sim: Simulation,
    pub trainer: Trainer,
    pub demo_rows: Vec<MetricRow>,
    pub report: FollowReport,
}

/// `wvn follow`.
pub fn run_follow(cfg: &ExperimentConfig) -> Result<FollowOutcome> {
    let world = worlds::load(&cfg.run.world, cfg)?;
    let mut dir = RunDir::create(cfg.out_dir())?;
    let (mut sim, trainer, demo_rows, failed) = prepare(cfg, world)?;
    dir.write_metrics(&demo_rows)?;
    if let Some(waypoint) = failed {
        dir.write_manifest(cfg, serde_json::json!({ "failed_waypoint": waypoint }))?;
        return Err(HarnessError::DriverFailed { waypoint });
    }
    let predictor = trainer.snapshot();
    let report = follow_phase(cfg, &mut sim, &predictor)?;
    dir.write_json("follow.json", &report)?;
    let costmap = sim.learned_costmap(cfg.nav.median_radius, predictor.tau_thr);
    dir.dump_maps(sim.tick, &sim, &costmap)?;
    dir.write_manifest(
        cfg,
        serde_json::json!({ "steps": report.steps, "adherence": report.adherence, "carrot_failed": report.carrot_failed }),
    )?;
    Ok(FollowOutcome { sim, trainer, demo_rows, report })
}

/// Drives the demonstration route without learning; the mission graph of the
/// returned simulation is the dataset.
pub fn collect(cfg: &ExperimentConfig, world: WorldFile) -> Result<Simulation> {
    let mut sim = Simulation::new(cfg, world);
    let (mut driver, progress) = route_driver(cfg, &sim)?;
    let val_start = 1.0 - cfg.run.val_fraction;
    loop {
        match drive(&mut driver, &progress, &mut sim, val_start) {
            Drive::Go(c) => {
                sim.step(c)?;
            }
            Drive::Done => break,
            Drive::Failed(waypoint) => return Err(HarnessError::DriverFailed { waypoint }),
        }
    }
    Ok(sim)
}

/// Trains `steps` steps on the training split of `nodes`, calling `each`
/// after every step.
pub fn train_offline(
    trainer: &mut Trainer,
    nodes: &[MissionNode],
    steps: usize,
    mut each: impl FnMut(&Trainer, &TrainMetrics) -> Result<()>,
) -> Result<usize> {
    for done in 0..steps {
        match trainer.train_step(nodes) {
            Some(m) => each(trainer, &m)?,
            None => return Ok(done),
        }
    }
    Ok(steps)
}

/// Two-sided 97.5% Student-t quantiles for 1..=30 degrees of freedom.
const T975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
    2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
];

/// Mean and 95% confidence half-width; zero half-width for one sample.
pub fn mean_half_width(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = T975.get(n - 2).copied().unwrap_or(1.96);
    (mean, t * (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblateRow {
    pub mode: Mode,
    pub gt_mean: f64,
    pub gt_half_width: f64,
    pub self_mean: f64,
    pub self_half_width: f64,
    pub gt: Vec<f64>,
    pub self_acc: Vec<f64>,
}

/// Trains every objective variant on the same per-seed datasets.
pub fn ablate(cfg: &ExperimentConfig, world: &WorldFile) -> Result<Vec<AblateRow>> {
    let modes = &cfg.ablate.modes;
    let mut gt = vec![Vec::new(); modes.len()];
    let mut selfs = vec![Vec::new(); modes.len()];
    for k in 0..cfg.ablate.seeds {
        let mut c = cfg.clone();
        c.run.seed = cfg.run.seed + k as u64;
        let mut sim = collect(&c, world.clone())?;
        sim.graphs.mission.truncate_split(Split::Train, c.run.fraction);
        let set = EvalSet::build(&sim.world.grid, sim.graphs.mission.nodes(), Split::Val, c.nav.slope_max)?;
        for (i, &mode) in modes.iter().enumerate() {
            let learner = TrainerConfig { mode, ..c.learner.clone() };
            let mut trainer = Trainer::new(learner, world.grid.embedding_dim(), c.run.seed)?;
            train_offline(&mut trainer, sim.graphs.mission.nodes(), c.run.steps, |_, _| Ok(()))?;
            let r = set.report(&trainer.snapshot(), Vec::new())?;
            gt[i].push(r.gt_accuracy);
            selfs[i].push(r.self_accuracy);
        }
    }
    Ok(modes
        .iter()
        .enumerate()
        .map(|(i, &mode)| {
            let (gt_mean, gt_half_width) = mean_half_width(&gt[i]);
            let (self_mean, self_half_width) = mean_half_width(&selfs[i]);
            AblateRow { mode, gt_mean, gt_half_width, self_mean, self_half_width, gt: gt[i].clone(), self_acc: selfs[i].clone() }
        })
        .collect())
}

pub fn ablate_csv(rows: &[AblateRow]) -> String {
    let mut s = String::from("mode,gt_mean,gt_half_width,self_mean,self_half_width,seeds\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{}\n",
            r.mode.name(),
            r.gt_mean,
            r.gt_half_width,
            r.self_mean,
            r.self_half_width,
            r.gt.len()
        );
    }
    s
}

/// `wvn ablate`.
pub fn run_ablate(cfg: &ExperimentConfig) -> Result<Vec<AblateRow>> {
    let world = worlds::load(&cfg.run.world, cfg)?;
    let mut dir = RunDir::create(cfg.out_dir())?;
    let rows = ablate(cfg, &world)?;
    dir.write_text("ablate.csv", &ablate_csv(&rows))?;
    dir.write_json("ablate.json", &rows)?;
    dir.write_manifest(cfg, serde_json::json!({ "modes": rows.len(), "seeds": cfg.ablate.seeds }))?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedPoint {
    pub fraction: f64,
    pub step: usize,
    pub gt_accuracy: f64,
}

/// Accuracy over training steps for each dataset fraction, evaluated every
/// `eval.eval_stride` steps on the validation split.
pub fn speed_study(cfg: &ExperimentConfig, dataset: &Simulation, fractions: &[f64]) -> Result<Vec<SpeedPoint>> {
    let stride = cfg.eval.eval_stride.max(1);
    let set = EvalSet::build(&dataset.world.grid, dataset.graphs.mission.nodes(), Split::Val, cfg.nav.slope_max)?;
    let mut out = Vec::new();
    for &fraction in fractions {
        let mut graph = dataset.graphs.mission.clone();
        graph.truncate_split(Split::Train, fraction);
        let mut trainer = trainer_for(cfg, &dataset.world)?;
        let mut step = 0;
        train_offline(&mut trainer, graph.nodes(), cfg.run.steps, |t, _| {
            step += 1;
            if step % stride == 0 {
                out.push(SpeedPoint { fraction, step, gt_accuracy: set.gt_accuracy(&t.snapshot())? });
            }
            Ok(())
        })?;
    }
    Ok(out)
}

pub fn speed_csv(points: &[SpeedPoint]) -> String {
    let mut s = String::from("fraction,step,gt_accuracy\n");
    for p in points {
        s += &format!("{},{},{}\n", p.fraction, p.step, p.gt_accuracy);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossWorld {
    pub worlds: Vec<String>,
    /// `accuracy[train][eval]`, GT accuracy in percent.
    pub accuracy: Vec<Vec<f64>>,
}

impl CrossWorld {
    /// Diagonal entries that fall below the mean of their row's
    /// off-diagonal entries.
    pub fn diagonal_failures(&self) -> Vec<usize> {
        let n = self.worlds.len();
        (0..n)
            .filter(|&i| {
                let off: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| self.accuracy[i][j]).collect();
                !off.is_empty() && self.accuracy[i][i] < off.iter().sum::<f64>() / off.len() as f64
            })
            .collect()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("train");
        for w in &self.worlds {
            s += &format!(",{w}");
        }
        s.push('\n');
        for (w, row) in self.worlds.iter().zip(&self.accuracy) {
            s += w;
            for a in row {
                s += &format!(",{a}");
            }
            s.push('\n');
        }
        s
    }
}

/// Trains one model per world and evaluates it on every world's validation
/// split.
pub fn cross_world(cfg: &ExperimentConfig, specs: &[String]) -> Result<CrossWorld> {
    let mut datasets = Vec::with_capacity(specs.len());
    for spec in specs {
        let sim = collect(cfg, worlds::load(spec, cfg)?)?;
        let set = EvalSet::build(&sim.world.grid, sim.graphs.mission.nodes(), Split::Val, cfg.nav.slope_max)?;
        datasets.push((sim, set));
    }
    let dims: Vec<usize> = datasets.iter().map(|(s, _)| s.world.grid.embedding_dim()).collect();
    if dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(HarnessError::Config("cross-world worlds must share one embedding dimension".into()));
    }
    let mut accuracy = Vec::with_capacity(specs.len());
    for (sim, _) in &datasets {
        let mut trainer = trainer_for(cfg, &sim.world)?;
        let mut graph = sim.graphs.mission.clone();
        graph.truncate_split(Split::Train, cfg.run.fraction);
        train_offline(&mut trainer, graph.nodes(), cfg.run.steps, |_, _| Ok(()))?;
        let p = trainer.snapshot();
        accuracy.push(datasets.iter().map(|(_, set)| set.gt_accuracy(&p)).collect::<Result<Vec<_>>>()?);
    }
    Ok(CrossWorld { worlds: specs.to_vec(), accuracy })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutcome {
    pub report: Option<EvalReport>,
    pub cross_world: Option<CrossWorld>,
    pub speed: Option<Vec<SpeedPoint>>,
    /// False when the checkpoint report misses `eval.min_gt_accuracy`.
    pub passed: bool,
}

/// `wvn eval`: checkpoint report, cross-world matrix and speed study, each
/// when configured.
pub fn run_eval(cfg: &ExperimentConfig) -> Result<EvalOutcome> {
    let ckpt = load_checkpoint_trainer(cfg)?;
    if ckpt.is_none() && cfg.eval.cross_worlds.is_empty() && !cfg.eval.speed_study {
        return Err(HarnessError::Config("eval needs eval.checkpoint, eval.cross_worlds or eval.speed_study".into()));
    }
    let world = worlds::load(&cfg.run.world, cfg)?;
    let mut dir = RunDir::create(cfg.out_dir())?;
    let dataset = if ckpt.is_some() || cfg.eval.speed_study { Some(collect(cfg, world)?) } else { None };

    let mut outcome = EvalOutcome { report: None, cross_world: None, speed: None, passed: true };
    if let (Some(trainer), Some(data)) = (&ckpt, &dataset) {
        let set = EvalSet::build(&data.world.grid, data.graphs.mission.nodes(), cfg.eval.split, cfg.nav.slope_max)?;
        let report = set.report(&trainer.snapshot(), Vec::new())?;
        outcome.passed = report.gt_accuracy >= cfg.eval.min_gt_accuracy;
        dir.write_json("report.json", &report)?;
        outcome.report = Some(report);
    }
    if !cfg.eval.cross_worlds.is_empty() {
        let m = cross_world(cfg, &cfg.eval.cross_worlds)?;
        dir.write_text("cross_world.csv", &m.csv())?;
        outcome.cross_world = Some(m);
    }
    if let (true, Some(data)) = (cfg.eval.speed_study, &dataset) {
        let points = speed_study(cfg, data, &cfg.eval.fractions)?;
        dir.write_text("speed.csv", &speed_csv(&points))?;
        outcome.speed = Some(points);
    }
    dir.write_manifest(
        cfg,
        serde_json::json!({
            "gt_accuracy": outcome.report.as_ref().map(|r| r.gt_accuracy),
            "passed": outcome.passed,
        }),
    )?;
    Ok(outcome)
}

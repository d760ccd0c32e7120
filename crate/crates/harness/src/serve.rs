//! `wvn serve`: the simulation driven live by an operator over telemetry.
//!
//! All commands are applied between ticks on the simulation thread, so every
//! published snapshot reflects whole commands only.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use wvn_core::learner::Trainer;
use wvn_core::navstack::{plan_twist, sdf, smart_carrot};
use wvn_core::robot::{DriverOutput, ScriptedDriver, TwistCommand};
use wvn_telemetry::{
    validate_param, Deadman, Layer, MapLayers, MetricPoint, OperatorCommand, Params, SegmentOverlay, StateSnapshot,
    TelemetryServer,
};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::sim::{Observation, Simulation};
use crate::worlds;

/// Training-curve points carried in each snapshot.
pub const METRICS_TAIL: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveMode {
    /// The scripted driver follows the world's route.
    Scripted,
    /// Only operator twists move the robot.
    Teleop,
    /// Smart-carrot driving on the learned map with learning paused.
    Follow,
}

impl DriveMode {
    pub fn name(self) -> &'static str {
        match self {
            DriveMode::Scripted => "scripted",
            DriveMode::Teleop => "teleop",
            DriveMode::Follow => "follow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [DriveMode::Scripted, DriveMode::Teleop, DriveMode::Follow].into_iter().find(|m| m.name() == s)
    }
}

pub struct ServeSession {
    cfg: ExperimentConfig,
    pub sim: Simulation,
    pub trainer: Trainer,
    driver: Option<ScriptedDriver>,
    pub mode: DriveMode,
    pub paused: bool,
    deadman: Deadman,
    metrics: VecDeque<MetricPoint>,
    last: Option<Observation>,
}

impl ServeSession {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let world = worlds::load(&cfg.run.world, cfg)?;
        let trainer = Trainer::new(cfg.learner.clone(), world.grid.embedding_dim(), cfg.run.seed)?;
        let driver = world.route.as_ref().map(|r| ScriptedDriver::new(r.expanded(), cfg.driver));
        let mode = if driver.is_some() { DriveMode::Scripted } else { DriveMode::Teleop };
        Ok(Self {
            cfg: cfg.clone(),
            sim: Simulation::new(cfg, world),
            trainer,
            driver,
            mode,
            paused: false,
            deadman: Deadman::default(),
            metrics: VecDeque::with_capacity(METRICS_TAIL),
            last: None,
        })
    }

    /// Applies one operator command. `now` is wall-clock seconds.
    pub fn apply(&mut self, cmd: &OperatorCommand, now: f64) -> Result<(), String> {
        match cmd {
            OperatorCommand::Twist { vx, vy, yaw_rate } => {
                let t = TwistCommand::new(*vx, *vy, *yaw_rate).clamped(&self.sim.robot_cfg);
                self.deadman.set([t.vx, t.vy, t.yaw_rate], now);
                self.mode = DriveMode::Teleop;
            }
            OperatorCommand::SetMode { mode } => {
                let m = DriveMode::parse(mode).ok_or_else(|| format!("unknown mode `{mode}`; expected scripted, teleop or follow"))?;
                if m == DriveMode::Scripted && self.driver.is_none() {
                    return Err("world has no scripted route".into());
                }
                self.mode = m;
                self.deadman.clear();
            }
            OperatorCommand::SetParam { key, value } => {
                validate_param(key, *value)?;
                match key.as_str() {
                    "k_sigma" => self.trainer.set_k_sigma(*value),
                    "target_fpr" => self.trainer.set_target_fpr(*value),
                    "sigmoid_k" => self.sim.filter.k = *value,
                    "sigmoid_vthr" => self.sim.filter.v_thr = *value,
                    _ => unreachable!("validate_param accepts only whitelisted keys"),
                }
            }
            OperatorCommand::Pause => self.paused = true,
            OperatorCommand::Resume => self.paused = false,
            OperatorCommand::Reset => {
                let paused = self.paused;
                *self = Self::new(&self.cfg).map_err(|e| e.to_string())?;
                self.paused = paused;
            }
        }
        Ok(())
    }

    fn command(&mut self, now: f64) -> TwistCommand {
        if self.deadman.is_live(now) || self.mode == DriveMode::Teleop {
            let [vx, vy, w] = self.deadman.twist(now);
            return TwistCommand::new(vx, vy, w);
        }
        match self.mode {
            DriveMode::Scripted => match self.driver.as_mut().map(|d| d.command(&self.sim.robot, &self.sim.robot_cfg)) {
                Some(DriverOutput::Command(c)) => c,
                _ => TwistCommand::ZERO,
            },
            DriveMode::Follow => {
                let p = self.trainer.snapshot();
                let costmap = self.sim.learned_costmap(self.cfg.nav.median_radius, p.tau_thr);
                let field = sdf(&costmap);
                match smart_carrot(&self.sim.pose(), &costmap, &field, &self.cfg.nav.carrot) {
                    Some(c) => {
                        let goal = self.sim.world.grid.geometry().center(c);
                        plan_twist(&self.sim.pose(), goal, &costmap, &field, &self.cfg.nav.planner).cmd
                    }
                    None => TwistCommand::ZERO,
                }
            }
            DriveMode::Teleop => TwistCommand::ZERO,
        }
    }

    /// One simulation tick unless paused.
    pub fn tick(&mut self, now: f64) -> Result<()> {
        if self.paused {
            return Ok(());
        }
        let predictor = self.trainer.snapshot();
        self.last = Some(self.sim.observe(&predictor)?);
        let cmd = self.command(now);
        self.sim.record = self.mode != DriveMode::Follow;
        self.sim.step(cmd)?;
        if self.mode != DriveMode::Follow {
            for _ in 0..self.cfg.run.train_per_tick {
                if let Some(m) = self.trainer.train_step(self.sim.graphs.mission.nodes()) {
                    if self.metrics.len() == METRICS_TAIL {
                        self.metrics.pop_front();
                    }
                    self.metrics.push_back(MetricPoint {
                        step: m.step,
                        l_total: m.l_total,
                        l_trav: m.l_trav,
                        l_reco: m.l_reco,
                        val_acc: None,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> StateSnapshot {
        let g = *self.sim.world.grid.geometry();
        let stats = self.trainer.stats();
        let costmap = self.sim.learned_costmap(self.cfg.nav.median_radius, self.trainer.tau_thr());
        let segments = self
            .last
            .as_ref()
            .map(|o| {
                o.frame
                    .segments
                    .iter()
                    .zip(&o.predictions)
                    .map(|(s, p)| SegmentOverlay {
                        id: s.id as u32,
                        trav: p.trav as f32,
                        confidence: p.confidence as f32,
                        traversable: p.traversable,
                        cells: s.cells.iter().map(|c| [c.x as u32, c.y as u32]).collect(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        let pose = self.sim.pose();
        StateSnapshot {
            tick: self.sim.tick,
            time: self.sim.time(),
            pose: [pose.x, pose.y, pose.yaw],
            velocity: [self.sim.robot.velocity.0, self.sim.robot.velocity.1],
            score: self.sim.score,
            drive_mode: self.mode.name().into(),
            paused: self.paused,
            layers: MapLayers {
                width: g.width as u32,
                height: g.height as u32,
                cell_size: g.cell_size,
                gt: Layer::from_f64(&self.sim.gt_layer()),
                fused: Layer::from_f64(&self.sim.map.trav_layer(-1.0)),
                confidence: Layer::from_f64(&self.sim.map.conf_layer(-1.0)),
                sdf: Layer::from_f64(&sdf(&costmap).dist),
            },
            segments,
            metrics: self.metrics.iter().copied().collect(),
            tau_thr: self.trainer.tau_thr(),
            mu_pos: stats.mu_pos,
            sigma_pos: stats.sigma_pos,
            params: Params {
                k_sigma: self.trainer.config().k_sigma,
                target_fpr: self.trainer.config().target_fpr,
                sigmoid_k: self.sim.filter.k,
                sigmoid_vthr: self.sim.filter.v_thr,
            },
        }
    }
}

/// Runs the session against `server` until `stop` is set or
/// `serve.max_ticks` loop iterations have passed. Returns the iteration count.
pub fn serve(cfg: &ExperimentConfig, server: &TelemetryServer, stop: &AtomicBool) -> Result<u64> {
    let mut session = ServeSession::new(cfg)?;
    let tick_period = 1.0 / cfg.serve.tick_hz;
    let snap_period = 1.0 / cfg.serve.snapshot_hz;
    let start = Instant::now();
    let (mut next_tick, mut next_snap) = (0.0, 0.0);
    let mut iterations = 0u64;
    while !stop.load(Ordering::SeqCst) && (cfg.serve.max_ticks == 0 || iterations < cfg.serve.max_ticks) {
        let now = start.elapsed().as_secs_f64();
        for inc in server.drain_commands() {
            match session.apply(&inc.command, now) {
                Ok(()) => server.ack(inc.client, inc.seq, session.sim.tick),
                Err(reason) => server.nack(inc.client, inc.seq, reason),
            }
        }
        if now >= next_tick {
            session.tick(now)?;
            iterations += 1;
            next_tick += tick_period;
        }
        if now >= next_snap {
            if let Err(e) = server.publish(&session.snapshot()) {
                eprintln!("snapshot skipped: {e}");
            }
            next_snap += snap_period;
        }
        let wait = (next_tick.min(next_snap) - start.elapsed().as_secs_f64()).clamp(0.0, 0.005);
        std::thread::sleep(Duration::from_secs_f64(wait));
    }
    Ok(iterations)
}

/// `wvn serve`.
pub fn run_serve(cfg: &ExperimentConfig) -> Result<u64> {
    let server = TelemetryServer::bind((cfg.serve.host.as_str(), cfg.serve.port))
        .map_err(|e| HarnessError::Run(format!("cannot listen on {}:{}: {e}", cfg.serve.host, cfg.serve.port)))?;
    eprintln!("telemetry listening on ws://{}", server.local_addr());
    serve(cfg, &server, &AtomicBool::new(false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> ServeSession {
        let mut cfg = ExperimentConfig::default();
        cfg.segmentation.n_segments = 16;
        ServeSession::new(&cfg).unwrap()
    }

    #[test]
    fn deadman_stops_teleop() {
        let mut s = session();
        s.apply(&OperatorCommand::Twist { vx: 1.0, vy: 0.0, yaw_rate: 0.0 }, 0.0).unwrap();
        s.sim.robot_cfg.v_noise = 0.0;
        s.tick(0.1).unwrap();
        assert!(s.sim.robot.velocity.0 > 0.5);
        // 0.6 s of silence.
        s.tick(0.6).unwrap();
        assert_eq!(s.sim.robot.velocity, (0.0, 0.0));
        assert_eq!(s.mode, DriveMode::Teleop);
    }

    #[test]
    fn params_are_whitelisted_and_visible() {
        let mut s = session();
        s.apply(&OperatorCommand::SetParam { key: "k_sigma".into(), value: 3.0 }, 0.0).unwrap();
        s.apply(&OperatorCommand::SetParam { key: "target_fpr".into(), value: 0.3 }, 0.0).unwrap();
        let snap = s.snapshot();
        assert_eq!((snap.params.k_sigma, snap.params.target_fpr), (3.0, 0.3));
        assert!(s.apply(&OperatorCommand::SetParam { key: "lr".into(), value: 0.1 }, 0.0).is_err());
        assert!(s.apply(&OperatorCommand::SetMode { mode: "warp".into() }, 0.0).is_err());
    }

    #[test]
    fn pause_and_reset() {
        let mut s = session();
        s.tick(0.0).unwrap();
        s.apply(&OperatorCommand::Pause, 0.0).unwrap();
        s.tick(0.1).unwrap();
        assert_eq!(s.sim.tick, 1);
        s.apply(&OperatorCommand::Resume, 0.1).unwrap();
        s.tick(0.2).unwrap();
        assert_eq!(s.sim.tick, 2);
        s.apply(&OperatorCommand::Reset, 0.2).unwrap();
        assert_eq!(s.sim.tick, 0);
        let snap = s.snapshot();
        assert_eq!(snap.layers.gt.0.len(), 48 * 48);
        snap.layers.validate().unwrap();
    }
}

//! Planar robot with terrain-coupled velocity tracking.
//!
//! The achieved velocity is the command scaled by the mobility of the current
//! cell (`τ` above `block_thr`, zero below), plus zero-mean noise while translating. Motion into
//! a blocked or out-of-bounds cell is rejected.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Pose2};
use crate::world::TerrainGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotConfig {
    pub v_max: f64,
    pub yaw_rate_max: f64,
    pub dt: f64,
    pub v_noise: f64,
    pub block_thr: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self { v_max: 1.0, yaw_rate_max: 2.0, dt: 0.1, v_noise: 0.02, block_thr: 0.1 }
    }
}

impl RobotConfig {
    pub fn mobility(&self, gt_trav: f64) -> f64 {
        if gt_trav < self.block_thr {
            0.0
        } else {
            gt_trav
        }
    }

    pub fn is_blocked(&self, gt_trav: f64) -> bool {
        gt_trav < self.block_thr
    }
}

/// Body-frame velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TwistCommand {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl TwistCommand {
    pub const ZERO: TwistCommand = TwistCommand { vx: 0.0, vy: 0.0, yaw_rate: 0.0 };

    pub fn new(vx: f64, vy: f64, yaw_rate: f64) -> Self {
        Self { vx, vy, yaw_rate }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    /// Clamps planar speed to `v_max` and yaw rate to `yaw_rate_max`.
    /// Non-finite components become zero.
    pub fn clamped(&self, cfg: &RobotConfig) -> Self {
        let f = |v: f64| if v.is_finite() { v } else { 0.0 };
        let (mut vx, mut vy) = (f(self.vx), f(self.vy));
        let s = vx.hypot(vy);
        if s > cfg.v_max && s > 0.0 {
            vx *= cfg.v_max / s;
            vy *= cfg.v_max / s;
        }
        Self { vx, vy, yaw_rate: f(self.yaw_rate).clamp(-cfg.yaw_rate_max, cfg.yaw_rate_max) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2,
    /// Achieved body-frame velocity of the last step.
    pub velocity: (f64, f64),
    pub time: f64,
}

impl RobotState {
    pub fn at(pose: Pose2) -> Self {
        Self { pose, velocity: (0.0, 0.0), time: 0.0 }
    }
}

/// Advances the robot by one `cfg.dt`.
pub fn step<R: Rng + ?Sized>(
    state: &RobotState,
    cmd: &TwistCommand,
    grid: &TerrainGrid,
    cfg: &RobotConfig,
    rng: &mut R,
) -> RobotState {
    let cmd = cmd.clamped(cfg);
    let mobility = cfg.mobility(grid.gt_trav_at_point(state.pose.x, state.pose.y));
    let (mut vx, mut vy) = (0.0, 0.0);
    if mobility > 0.0 {
        vx = cmd.vx * mobility;
        vy = cmd.vy * mobility;
        // Tracking noise only while translating; a robot told to stand still
        // does not drift.
        if cfg.v_noise > 0.0 && (cmd.vx != 0.0 || cmd.vy != 0.0) {
            vx += cfg.v_noise * rng.sample::<f64, _>(StandardNormal);
            vy += cfg.v_noise * rng.sample::<f64, _>(StandardNormal);
        }
        let s = vx.hypot(vy);
        if s > cfg.v_max {
            vx *= cfg.v_max / s;
            vy *= cfg.v_max / s;
        }
    }
    let (wx, wy) = state.pose.body_to_world(vx, vy);
    let (nx, ny) = (state.pose.x + wx * cfg.dt, state.pose.y + wy * cfg.dt);
    let yaw = wrap_angle(state.pose.yaw + cmd.yaw_rate * cfg.dt);

    let target_ok = grid
        .geometry()
        .cell_of(nx, ny)
        .is_some_and(|c| !cfg.is_blocked(grid.gt_trav_at(c)));
    if target_ok {
        RobotState { pose: Pose2::new(nx, ny, yaw), velocity: (vx, vy), time: state.time + cfg.dt }
    } else {
        RobotState {
            pose: Pose2::new(state.pose.x, state.pose.y, yaw),
            velocity: (0.0, 0.0),
            time: state.time + cfg.dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverConfig {
    pub capture_radius: f64,
    pub k_p: f64,
    pub k_yaw: f64,
    /// Seconds allowed per waypoint.
    pub timeout: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self { capture_radius: 0.5, k_p: 2.0, k_yaw: 2.0, timeout: 30.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriverOutput {
    Command(TwistCommand),
    Finished,
    Failed { waypoint: usize },
}

/// Proportional waypoint follower standing in for a human operator.
#[derive(Debug, Clone)]
pub struct ScriptedDriver {
    waypoints: Vec<(f64, f64)>,
    current: usize,
    active_since: f64,
    cfg: DriverConfig,
}

impl ScriptedDriver {
    /// # Panics
    /// Panics if `waypoints` is empty.
    pub fn new(waypoints: Vec<(f64, f64)>, cfg: DriverConfig) -> Self {
        assert!(!waypoints.is_empty(), "scripted driver needs at least one waypoint");
        Self { waypoints, current: 0, active_since: 0.0, cfg }
    }

    pub fn current_index(&self) -> usize {
        self.current
    }

    pub fn waypoint_count(&self) -> usize {
        self.waypoints.len()
    }

    /// Fraction of waypoints already reached.
    pub fn progress(&self) -> f64 {
        self.current as f64 / self.waypoints.len() as f64
    }

    pub fn command(&mut self, state: &RobotState, robot: &RobotConfig) -> DriverOutput {
        let Some(&(wx, wy)) = self.waypoints.get(self.current) else {
            return DriverOutput::Finished;
        };
        let dist = (wx - state.pose.x).hypot(wy - state.pose.y);
        if dist <= self.cfg.capture_radius {
            self.current += 1;
            self.active_since = state.time;
            return if self.current == self.waypoints.len() {
                DriverOutput::Finished
            } else {
                DriverOutput::Command(TwistCommand::ZERO)
            };
        }
        if state.time - self.active_since > self.cfg.timeout {
            return DriverOutput::Failed { waypoint: self.current };
        }
        let (bx, by) = state.pose.world_to_body(wx - state.pose.x, wy - state.pose.y);
        let yaw_rate = self.cfg.k_yaw * state.pose.bearing_to(wx, wy);
        DriverOutput::Command(
            TwistCommand::new(self.cfg.k_p * bx, self.cfg.k_p * by, yaw_rate).clamped(robot),
        )
    }
}

//! The simulation loop state: robot, supervision filter, graphs and fused map.
//! One `Simulation` is the single writer of all of them.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wvn_core::geometry::{Cell, Pose2};
use wvn_core::graphs::{footprint_cells, Graphs, Split};
use wvn_core::learner::{Predictor, SegmentPrediction};
use wvn_core::navstack::{Costmap, TravMap};
use wvn_core::robot::{self, DriverConfig, RobotConfig, RobotState, TwistCommand};
use wvn_core::supervision::{velocity_error, ScoreFilter};
use wvn_core::world::{capture_frame, CameraConfig, SegmentFrame, SegmentationConfig, WorldFile, GT_TRAVERSABLE};

use crate::config::ExperimentConfig;
use crate::error::Result;

/// Stream offsets keep the robot noise independent of the learner seed.
const ROBOT_STREAM: u64 = 0x5157_0b07;

#[derive(Debug, Clone)]
pub struct Observation {
    pub frame: SegmentFrame,
    pub predictions: Vec<SegmentPrediction>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutcome {
    pub prev_cell: Option<Cell>,
    pub cell: Option<Cell>,
    /// A mission node was captured at the new pose.
    pub captured: bool,
}

impl TickOutcome {
    pub fn entered_new_cell(&self) -> bool {
        self.prev_cell != self.cell
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub world: WorldFile,
    pub robot: RobotState,
    pub filter: ScoreFilter,
    pub graphs: Graphs,
    pub map: TravMap,
    pub odometer: f64,
    pub score: f64,
    pub tick: u64,
    /// Split assigned to mission nodes captured from now on.
    pub split: Split,
    /// Classes that have been under the robot footprint.
    pub traversed_classes: BTreeSet<u16>,
    pub robot_cfg: RobotConfig,
    pub driver_cfg: DriverConfig,
    pub camera: CameraConfig,
    pub segmentation: SegmentationConfig,
    /// When false, no mission nodes are captured (frozen learner).
    pub record: bool,
    next_frame: u64,
    rng: ChaCha8Rng,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig, world: WorldFile) -> Self {
        let start = world
            .start
            .or_else(|| world.route.as_ref().map(|r| r.start_pose()))
            .unwrap_or_else(|| {
                let (w, h) = world.grid.geometry().extent();
                Pose2::new(w / 2.0, h / 2.0, 0.0)
            });
        let geometry = *world.grid.geometry();
        let mut sim = Self {
            robot: RobotState::at(start),
            filter: ScoreFilter::new(&cfg.score),
            graphs: Graphs::new(cfg.graphs),
            map: TravMap::new(geometry, cfg.nav.alpha),
            odometer: 0.0,
            score: 0.0,
            tick: 0,
            split: Split::Train,
            traversed_classes: BTreeSet::new(),
            robot_cfg: cfg.robot,
            driver_cfg: cfg.driver,
            camera: cfg.camera,
            segmentation: cfg.segmentation,
            record: true,
            next_frame: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.run.seed ^ ROBOT_STREAM),
            world,
        };
        sim.score = sim.filter.current_score();
        sim
    }

    pub fn pose(&self) -> Pose2 {
        self.robot.pose
    }

    pub fn time(&self) -> f64 {
        self.robot.time
    }

    pub fn cell(&self) -> Option<Cell> {
        self.world.grid.geometry().cell_of(self.robot.pose.x, self.robot.pose.y)
    }

    /// Renders and segments the current view under a fresh frame id.
    pub fn capture(&mut self) -> Result<SegmentFrame> {
        let id = self.next_frame;
        self.next_frame += 1;
        Ok(capture_frame(&self.world.grid, self.robot.pose, id, &self.camera, &self.segmentation)?)
    }

    /// Advances one tick: motion, supervision, and mission capture.
    pub fn step(&mut self, cmd: TwistCommand) -> Result<TickOutcome> {
        let cmd = cmd.clamped(&self.robot_cfg);
        let prev_cell = self.cell();
        let prev = self.robot.pose;
        self.robot = robot::step(&self.robot, &cmd, &self.world.grid, &self.robot_cfg, &mut self.rng);
        self.odometer += prev.distance(&self.robot.pose);
        self.score = self.filter.observe(velocity_error(&cmd, self.robot.velocity));
        self.tick += 1;

        let geom = *self.world.grid.geometry();
        let pose = self.robot.pose;
        self.graphs.add_supervision(&geom, self.robot.time, pose, self.odometer, self.score);
        for c in footprint_cells(&geom, &pose, self.graphs.cfg.footprint_radius) {
            self.traversed_classes.insert(self.world.grid.cells()[geom.index(c)].class_id);
        }

        let mut captured = false;
        if self.record && self.graphs.mission.accepts(&pose) {
            let frame = self.capture()?;
            captured = self.graphs.add_mission_node(frame, self.odometer, self.split);
        }
        Ok(TickOutcome { prev_cell, cell: self.cell(), captured })
    }

    /// Captures a view, predicts it and fuses the prediction into the map.
    pub fn observe(&mut self, predictor: &Predictor) -> Result<Observation> {
        let frame = self.capture()?;
        let predictions = predictor.predict(&frame)?;
        self.map.fuse_prediction(&frame, &predictions);
        Ok(Observation { frame, predictions })
    }

    /// Costmap from the median-filtered fused map.
    pub fn learned_costmap(&self, median_radius: usize, tau: f64) -> Costmap {
        self.map.median_filter(median_radius).binarize(tau)
    }

    /// Costmap from binarized ground truth, fully known.
    pub fn gt_costmap(&self) -> Costmap {
        let geom = *self.world.grid.geometry();
        let blocked = self.world.grid.cells().iter().map(|c| c.gt_trav < GT_TRAVERSABLE).collect();
        Costmap::from_blocked(geom, blocked)
    }

    pub fn gt_layer(&self) -> Vec<f64> {
        self.world.grid.cells().iter().map(|c| c.gt_trav).collect()
    }

    pub fn class_at(&self, cell: Cell) -> u16 {
        self.world.grid.cells()[self.world.grid.geometry().index(cell)].class_id
    }
}

/// Distance-based progress along a waypoint sequence.
#[derive(Debug, Clone)]
pub struct RouteProgress {
    /// Cumulative length at each waypoint, measured from the start pose.
    cumulative: Vec<f64>,
    waypoints: Vec<(f64, f64)>,
}

impl RouteProgress {
    pub fn new(start: (f64, f64), waypoints: &[(f64, f64)]) -> Self {
        let mut cumulative = Vec::with_capacity(waypoints.len());
        let mut prev = start;
        let mut total = 0.0;
        for &w in waypoints {
            total += (w.0 - prev.0).hypot(w.1 - prev.1);
            cumulative.push(total);
            prev = w;
        }
        Self { cumulative, waypoints: waypoints.to_vec() }
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Fraction in [0, 1] given the index of the waypoint being approached.
    pub fn fraction(&self, current: usize, pose: &Pose2) -> f64 {
        let total = self.total();
        if total <= 0.0 || current >= self.waypoints.len() {
            return 1.0;
        }
        let (wx, wy) = self.waypoints[current];
        let along = self.cumulative[current] - (wx - pose.x).hypot(wy - pose.y);
        let lower = if current == 0 { 0.0 } else { self.cumulative[current - 1] };
        (along.max(lower) / total).clamp(0.0, 1.0)
    }
}

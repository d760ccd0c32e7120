//! Reactive local planner. The attractor points at a lookahead cell on the
//! shortest path through non-blocked cells; repulsion follows the negative
//! gradient of a clearance penalty on the SDF.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{Costmap, SdfGrid};
use crate::geometry::{wrap_angle, Cell, GridGeometry, Pose2};
use crate::robot::TwistCommand;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub k_rep: f64,
    /// Clearance below which repulsion acts, in cells.
    pub d_safe_cells: f64,
    /// Clearance below which the robot stops, in cells.
    pub d_stop_cells: f64,
    pub v_max: f64,
    pub yaw_rate_max: f64,
    pub k_yaw: f64,
    pub lookahead_m: f64,
    /// Path cost multiplier for unobserved cells.
    pub unknown_cost: f64,
    /// Extra path cost per step at zero clearance, fading out at `d_safe`.
    pub clearance_cost: f64,
    /// Control period used to check that the next motion stays free.
    pub dt: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            k_rep: 2.0,
            d_safe_cells: 3.0,
            d_stop_cells: 1.0,
            v_max: 1.0,
            yaw_rate_max: 2.0,
            k_yaw: 2.0,
            lookahead_m: 1.0,
            unknown_cost: 2.0,
            clearance_cost: 3.0,
            dt: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanStatus {
    Driving,
    /// Translation withheld because the next motion would enter a blocked cell.
    Turning,
    SafetyStop,
    NoPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutput {
    pub cmd: TwistCommand,
    pub status: PlanStatus,
    pub lookahead: Option<(f64, f64)>,
    /// Goal actually pursued after snapping out of blocked cells.
    pub goal: (f64, f64),
}

fn dist_cells(a: Cell, b: Cell) -> f64 {
    let dx = a.x.abs_diff(b.x) as f64;
    let dy = a.y.abs_diff(b.y) as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Nearest free cell to `target` (ties in row-major order).
fn nearest_free(costmap: &Costmap, target: Cell) -> Option<Cell> {
    let g = costmap.geometry;
    g.cells()
        .filter(|&c| !costmap.is_blocked(c))
        .min_by(|&a, &b| dist_cells(a, target).total_cmp(&dist_cells(b, target)).then(a.cmp(&b)))
}

/// Whether the straight segment between two points crosses only free cells,
/// sampled at a quarter cell.
fn segment_free(costmap: &Costmap, from: (f64, f64), to: (f64, f64)) -> bool {
    let g = costmap.geometry;
    let len = (to.0 - from.0).hypot(to.1 - from.1);
    let n = ((len / (0.25 * g.cell_size)).ceil() as usize).max(1);
    (0..=n).all(|i| {
        let t = i as f64 / n as f64;
        !costmap.is_blocked_at(from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1))
    })
}

/// 8-connected shortest path that never touches a known-blocked cell and
/// never cuts a blocked corner. Unobserved cells are passable at a premium.
pub fn shortest_path(costmap: &Costmap, sdf: &SdfGrid, start: Cell, goal: Cell, cfg: &PlannerConfig) -> Option<Vec<Cell>> {
    let g = costmap.geometry;
    if !g.contains(start) || !g.contains(goal) {
        return None;
    }
    let hard = |c: Cell| costmap.is_known(c) && costmap.is_blocked(c);
    if hard(goal) {
        return None;
    }
    let d_safe = cfg.d_safe_cells * g.cell_size;
    let cell_cost = |c: Cell| -> f64 {
        let mut k = 1.0;
        if !costmap.is_known(c) {
            k *= cfg.unknown_cost;
        }
        let s = sdf.at(c);
        if s < d_safe {
            k += cfg.clearance_cost * (1.0 - s / d_safe);
        }
        k
    };
    let n = g.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    let si = g.index(start);
    dist[si] = 0.0;
    // Costs are non-negative; ordering by the bit pattern of a non-negative
    // f64 matches numeric order.
    heap.push(Reverse((0u64, si)));
    let gi = g.index(goal);
    while let Some(Reverse((dbits, i))) = heap.pop() {
        let d = f64::from_bits(dbits);
        if d > dist[i] {
            continue;
        }
        if i == gi {
            break;
        }
        let c = g.cell_at(i);
        for nb in g.neighbors(c, true) {
            if hard(nb) {
                continue;
            }
            let diagonal = nb.x != c.x && nb.y != c.y;
            if diagonal && (hard(Cell::new(nb.x, c.y)) || hard(Cell::new(c.x, nb.y))) {
                continue;
            }
            let step = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
            let nd = d + step * 0.5 * (cell_cost(c) + cell_cost(nb));
            let j = g.index(nb);
            if nd < dist[j] {
                dist[j] = nd;
                prev[j] = i;
                heap.push(Reverse((nd.to_bits(), j)));
            }
        }
    }
    if !dist[gi].is_finite() {
        return None;
    }
    let mut path = vec![goal];
    let mut i = gi;
    while i != si {
        i = prev[i];
        path.push(g.cell_at(i));
    }
    path.reverse();
    Some(path)
}

/// Farthest path point within the lookahead distance that is reachable in a
/// straight line through free cells; the first step otherwise.
fn lookahead_point(costmap: &Costmap, g: &GridGeometry, pose: &Pose2, path: &[Cell], lookahead: f64) -> (f64, f64) {
    let from = (pose.x, pose.y);
    let mut best = path.get(1).or(path.first()).map(|&c| g.center(c)).unwrap_or(from);
    for &c in path.iter().skip(1) {
        let p = g.center(c);
        if (p.0 - from.0).hypot(p.1 - from.1) > lookahead {
            break;
        }
        if segment_free(costmap, from, p) {
            best = p;
        }
    }
    best
}

/// One control step toward `goal`.
pub fn plan_twist(pose: &Pose2, goal: (f64, f64), costmap: &Costmap, sdf: &SdfGrid, cfg: &PlannerConfig) -> PlanOutput {
    let g = costmap.geometry;
    let stop = |status, goal| PlanOutput { cmd: TwistCommand::ZERO, status, lookahead: None, goal };
    let Some(here) = g.cell_of(pose.x, pose.y) else {
        return stop(PlanStatus::SafetyStop, goal);
    };
    let clearance = sdf.at(here);
    if clearance < cfg.d_stop_cells * g.cell_size {
        return stop(PlanStatus::SafetyStop, goal);
    }

    let goal_cell = g.cell_of(goal.0.clamp(0.0, g.extent().0 - 1e-9), goal.1.clamp(0.0, g.extent().1 - 1e-9));
    let goal_cell = match goal_cell {
        Some(c) if !(costmap.is_known(c) && costmap.is_blocked(c)) => c,
        Some(c) => match nearest_free(costmap, c) {
            Some(f) => f,
            None => return stop(PlanStatus::NoPath, goal),
        },
        None => return stop(PlanStatus::NoPath, goal),
    };
    let goal = if g.cell_of(goal.0, goal.1) == Some(goal_cell) { goal } else { g.center(goal_cell) };
    let Some(path) = shortest_path(costmap, sdf, here, goal_cell, cfg) else {
        return stop(PlanStatus::NoPath, goal);
    };

    let target = if path.len() <= 1 { goal } else { lookahead_point(costmap, &g, pose, &path, cfg.lookahead_m) };
    let to_goal = (goal.0 - pose.x).hypot(goal.1 - pose.y);
    let (ax, ay) = (target.0 - pose.x, target.1 - pose.y);
    let an = ax.hypot(ay);
    if an < 1e-9 {
        return PlanOutput { cmd: TwistCommand::ZERO, status: PlanStatus::Driving, lookahead: Some(target), goal };
    }
    let attract = (ax / an, ay / an);

    // Dimensionless penalty (1 - s/d_safe)^2; its negative gradient scaled by
    // d_safe is 2 (1 - s/d_safe) ∇s.
    let d_safe = cfg.d_safe_cells * g.cell_size;
    let rep = if clearance.is_finite() && clearance < d_safe {
        let (gx, gy) = sdf.gradient(here);
        let w = 2.0 * (1.0 - clearance / d_safe) * cfg.k_rep;
        (w * gx, w * gy)
    } else {
        (0.0, 0.0)
    };

    let speed_limit = |dir: (f64, f64)| -> f64 {
        let mut v = cfg.v_max * (clearance / d_safe).clamp(0.0, 1.0);
        // Slow to arrive rather than overshoot.
        v = v.min(to_goal / (2.0 * cfg.dt)).min(cfg.v_max);
        // Translate mostly along the heading so the camera sees ahead.
        let bearing = wrap_angle(dir.1.atan2(dir.0) - pose.yaw);
        v * bearing.cos().max(0.0)
    };
    let step_free = |dir: (f64, f64), v: f64| -> bool {
        let reach = (v * cfg.dt * 1.5).max(0.0);
        segment_free(costmap, (pose.x, pose.y), (pose.x + dir.0 * reach, pose.y + dir.1 * reach))
    };

    let mut dir = (attract.0 + rep.0, attract.1 + rep.1);
    let dn = dir.0.hypot(dir.1);
    dir = if dn > 1e-9 { (dir.0 / dn, dir.1 / dn) } else { attract };
    let mut v = speed_limit(dir);
    if !step_free(dir, v) {
        dir = attract;
        v = speed_limit(dir);
    }
    let mut status = PlanStatus::Driving;
    if !step_free(dir, v) {
        v = 0.0;
        status = PlanStatus::Turning;
    }

    let heading_err = wrap_angle(dir.1.atan2(dir.0) - pose.yaw);
    let yaw_rate = (cfg.k_yaw * heading_err).clamp(-cfg.yaw_rate_max, cfg.yaw_rate_max);
    let (bx, by) = pose.world_to_body(dir.0 * v, dir.1 * v);
    PlanOutput { cmd: TwistCommand::new(bx, by, yaw_rate), status, lookahead: Some(target), goal }
}

#[cfg(test)]
mod tests {
    use super::super::sdf;
    use super::*;
    use crate::robot::{step, RobotConfig, RobotState};
    use crate::world::test_support::two_class_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn open_field_drives_straight_at_full_speed() {
        let g = GridGeometry::new(40, 40, 0.25);
        let c = Costmap::open(g);
        let s = sdf(&c);
        let out = plan_twist(&Pose2::new(2.125, 5.125, 0.0), (8.125, 5.125), &c, &s, &PlannerConfig::default());
        assert_eq!(out.status, PlanStatus::Driving);
        assert!((out.cmd.vx - 1.0).abs() < 1e-9, "{:?}", out.cmd);
        assert!(out.cmd.vy.abs() < 1e-9 && out.cmd.yaw_rate.abs() < 1e-9);
    }

    #[test]
    fn blocked_pose_stops() {
        let g = GridGeometry::new(10, 10, 0.25);
        let mut c = Costmap::open(g);
        c.set_blocked(Cell::new(4, 4), true);
        let s = sdf(&c);
        let out = plan_twist(&Pose2::new(1.1, 1.1, 0.0), (2.2, 2.2), &c, &s, &PlannerConfig::default());
        assert_eq!(out.status, PlanStatus::SafetyStop);
        assert_eq!(out.cmd, TwistCommand::ZERO);
    }

    #[test]
    fn walled_goal_has_no_path() {
        let g = GridGeometry::new(20, 20, 0.25);
        let mut c = Costmap::open(g);
        for y in 0..20 {
            c.set_blocked(Cell::new(10, y), true);
        }
        let s = sdf(&c);
        let out = plan_twist(&Pose2::new(1.0, 2.5, 0.0), (4.0, 2.5), &c, &s, &PlannerConfig::default());
        assert_eq!(out.status, PlanStatus::NoPath);
    }

    #[test]
    fn blocked_goal_snaps_to_free_cell() {
        let g = GridGeometry::new(20, 20, 0.25);
        let mut c = Costmap::open(g);
        c.set_blocked(Cell::new(15, 10), true);
        let s = sdf(&c);
        let out = plan_twist(&Pose2::new(1.0, 2.6, 0.0), (3.9, 2.6), &c, &s, &PlannerConfig::default());
        assert_ne!(g.cell_of(out.goal.0, out.goal.1), Some(Cell::new(15, 10)));
        assert!(!c.is_blocked_at(out.goal.0, out.goal.1));
    }

    /// Drives the real robot model through a wall gap on a 20×20 map.
    #[test]
    fn wall_gap_rollout_stays_free() {
        let mut grid = two_class_grid(20, 20, 2, 0.0);
        for y in 0..20 {
            if !(12..=15).contains(&y) {
                grid.paint(Cell::new(10, y), 1).unwrap();
            }
        }
        let g = *grid.geometry();
        let blocked = g.cells().map(|c| grid.gt_trav_at(c) < 0.5).collect();
        let costmap = Costmap::from_blocked(g, blocked);
        let s = sdf(&costmap);
        let cfg = PlannerConfig { d_safe_cells: 3.0, ..PlannerConfig::default() };
        let robot = RobotConfig { v_noise: 0.0, ..RobotConfig::default() };
        let mut state = RobotState::at(Pose2::new(3.5, 3.5, 0.0));
        let goal = (16.5, 3.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d_stop = cfg.d_stop_cells;
        let mut reached = false;
        for _ in 0..2000 {
            let out = plan_twist(&state.pose, goal, &costmap, &s, &cfg);
            state = step(&state, &out.cmd, &grid, &robot, &mut rng);
            let here = g.cell_of(state.pose.x, state.pose.y).unwrap();
            assert!(!costmap.is_blocked(here), "entered blocked cell {here:?}");
            assert!(s.at(here) >= d_stop - robot.v_max * robot.dt);
            if (state.pose.x - goal.0).hypot(state.pose.y - goal.1) < 0.5 {
                reached = true;
                break;
            }
        }
        assert!(reached, "stuck at {:?}", state.pose);
    }
}

//! Carrot selection: the clearest free cell in a forward annulus sector.

use serde::{Deserialize, Serialize};

use super::{Costmap, SdfGrid};
use crate::geometry::{wrap_angle, Cell, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CarrotConfig {
    pub sector_deg: f64,
    pub r_min_cells: f64,
    /// Outer radius in metres; usually the camera range.
    pub r_max_m: f64,
}

impl Default for CarrotConfig {
    fn default() -> Self {
        Self { sector_deg: 120.0, r_min_cells: 2.0, r_max_m: 4.0 }
    }
}

/// Free in-sector cell with the largest SDF. Ties go to the smaller absolute
/// bearing, then the smaller range, then row-major order. `None` if the
/// sector holds no free cell.
pub fn smart_carrot(pose: &Pose2, costmap: &Costmap, sdf: &SdfGrid, cfg: &CarrotConfig) -> Option<Cell> {
    let g = costmap.geometry;
    let r_min = cfg.r_min_cells * g.cell_size;
    let half = cfg.sector_deg.to_radians() / 2.0;
    let span = (cfg.r_max_m / g.cell_size).ceil() as isize + 1;
    let (cx, cy) = ((pose.x / g.cell_size).floor() as isize, (pose.y / g.cell_size).floor() as isize);
    let mut best: Option<(f64, f64, f64, Cell)> = None;
    for y in (cy - span).max(0)..=(cy + span).min(g.height as isize - 1) {
        for x in (cx - span).max(0)..=(cx + span).min(g.width as isize - 1) {
            let cell = Cell::new(x as usize, y as usize);
            if costmap.is_blocked(cell) {
                continue;
            }
            let (px, py) = g.center(cell);
            let range = (px - pose.x).hypot(py - pose.y);
            if range < r_min || range > cfg.r_max_m {
                continue;
            }
            let bearing = wrap_angle((py - pose.y).atan2(px - pose.x) - pose.yaw).abs();
            if bearing > half {
                continue;
            }
            let clearance = sdf.at(cell);
            let better = match best {
                None => true,
                Some((bc, bb, br, bcell)) => clearance
                    .total_cmp(&bc)
                    .then(bb.total_cmp(&bearing))
                    .then(br.total_cmp(&range))
                    .then(bcell.cmp(&cell))
                    .is_gt(),
            };
            if better {
                best = Some((clearance, bearing, range, cell));
            }
        }
    }
    best.map(|b| b.3)
}

#[cfg(test)]
mod tests {
    use super::super::sdf;
    use super::*;
    use crate::geometry::GridGeometry;

    #[test]
    fn uniform_field_picks_straight_ahead_at_r_min() {
        let g = GridGeometry::new(41, 41, 0.25);
        let c = Costmap::open(g);
        let s = sdf(&c);
        let pose = Pose2::new(5.125, 5.125, 0.0);
        let cell = smart_carrot(&pose, &c, &s, &CarrotConfig::default()).unwrap();
        assert_eq!(cell, Cell::new(22, 20));
    }

    #[test]
    fn corridor_centerline() {
        // Corridor along +x with walls at rows 10 and 18: centre row 14.
        let g = GridGeometry::new(60, 30, 0.25);
        let mut c = Costmap::open(g);
        for x in 0..60 {
            for y in (0..=10).chain(18..30) {
                c.set_blocked(Cell::new(x, y), true);
            }
        }
        let s = sdf(&c);
        let pose = Pose2::new(2.0, 14.5 * 0.25, 0.0);
        let cell = smart_carrot(&pose, &c, &s, &CarrotConfig::default()).unwrap();
        assert_eq!(cell.y, 14);
        // Argmax is invariant under a monotone rescaling of the field.
        let scaled = SdfGrid { geometry: g, dist: s.dist.iter().map(|d| d * d * 3.0).collect() };
        assert_eq!(smart_carrot(&pose, &c, &scaled, &CarrotConfig::default()), Some(cell));
    }

    #[test]
    fn blocked_sector_fails() {
        let g = GridGeometry::new(20, 20, 0.25);
        let mut c = Costmap::open(g);
        for cell in g.cells() {
            if cell.x > 10 {
                c.set_blocked(cell, true);
            }
        }
        let s = sdf(&c);
        assert_eq!(smart_carrot(&Pose2::new(2.6, 2.6, 0.0), &c, &s, &CarrotConfig::default()), None);
    }
}

//! Local navigation: temporal fusion of per-segment predictions into a
//! traversability grid, median filtering, binarization to a costmap, an exact
//! distance field to obstacles, a reactive planner and carrot selection.

mod carrot;
mod pgm;
mod planner;
mod sdf;

pub use carrot::{smart_carrot, CarrotConfig};
pub use pgm::{read_pgm, to_u8, write_pgm, Pgm};
pub use planner::{plan_twist, shortest_path, PlanOutput, PlanStatus, PlannerConfig};
pub use sdf::{brute_force_sdf, sdf, SdfGrid};

use serde::{Deserialize, Serialize};

use crate::geometry::{Cell, GridGeometry};
use crate::learner::SegmentPrediction;
use crate::world::SegmentFrame;

pub const DEFAULT_ALPHA: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct TravMap {
    geometry: GridGeometry,
    alpha: f64,
    trav: Vec<f64>,
    conf: Vec<f64>,
    known: Vec<bool>,
}

impl TravMap {
    pub fn new(geometry: GridGeometry, alpha: f64) -> Self {
        let n = geometry.len();
        Self { geometry, alpha: alpha.clamp(f64::MIN_POSITIVE, 1.0), trav: vec![0.0; n], conf: vec![0.0; n], known: vec![false; n] }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Fused traversability, `None` for unobserved cells.
    pub fn trav(&self, cell: Cell) -> Option<f64> {
        let i = self.geometry.index(cell);
        self.known[i].then(|| self.trav[i])
    }

    pub fn confidence(&self, cell: Cell) -> Option<f64> {
        let i = self.geometry.index(cell);
        self.known[i].then(|| self.conf[i])
    }

    pub fn is_known(&self, cell: Cell) -> bool {
        self.known[self.geometry.index(cell)]
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    /// Row-major layers with unknown cells reported as `fill`.
    pub fn trav_layer(&self, fill: f64) -> Vec<f64> {
        self.trav.iter().zip(&self.known).map(|(&v, &k)| if k { v } else { fill }).collect()
    }

    pub fn conf_layer(&self, fill: f64) -> Vec<f64> {
        self.conf.iter().zip(&self.known).map(|(&v, &k)| if k { v } else { fill }).collect()
    }

    pub fn clear(&mut self) {
        self.known.iter_mut().for_each(|k| *k = false);
        self.trav.iter_mut().for_each(|v| *v = 0.0);
        self.conf.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Exponential averaging of one observation into a cell.
    pub fn fuse_cell(&mut self, cell: Cell, trav: f64, conf: f64) {
        if !self.geometry.contains(cell) {
            return;
        }
        let i = self.geometry.index(cell);
        let (trav, conf) = (trav.clamp(0.0, 1.0), conf.clamp(0.0, 1.0));
        if self.known[i] {
            self.trav[i] = self.alpha * trav + (1.0 - self.alpha) * self.trav[i];
            self.conf[i] = self.alpha * conf + (1.0 - self.alpha) * self.conf[i];
        } else {
            self.trav[i] = trav;
            self.conf[i] = conf;
            self.known[i] = true;
        }
    }

    /// Fuses each segment's prediction into all of its member cells.
    pub fn fuse_prediction(&mut self, frame: &SegmentFrame, predictions: &[SegmentPrediction]) {
        for (seg, p) in frame.segments.iter().zip(predictions) {
            for &c in &seg.cells {
                self.fuse_cell(c, p.trav, p.confidence);
            }
        }
    }

    /// Median over known cells in each `(2r+1)²` window; the median of an even
    /// count is the mean of the two middle values.
    pub fn median_filter(&self, radius: usize) -> TravMap {
        let mut out = self.clone();
        if radius == 0 {
            return out;
        }
        let g = self.geometry;
        let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
        for cell in g.cells() {
            let i = g.index(cell);
            if !self.known[i] {
                continue;
            }
            window.clear();
            let (x0, x1) = (cell.x.saturating_sub(radius), (cell.x + radius).min(g.width - 1));
            let (y0, y1) = (cell.y.saturating_sub(radius), (cell.y + radius).min(g.height - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let j = y * g.width + x;
                    if self.known[j] {
                        window.push(self.trav[j]);
                    }
                }
            }
            out.trav[i] = median(&mut window);
        }
        out
    }

    /// Free iff known and fused traversability `>= tau`.
    pub fn binarize(&self, tau: f64) -> Costmap {
        let blocked = self.trav.iter().zip(&self.known).map(|(&v, &k)| !(k && v >= tau)).collect();
        Costmap { geometry: self.geometry, blocked, known: self.known.clone() }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Costmap {
    pub geometry: GridGeometry,
    pub blocked: Vec<bool>,
    /// Cells that have been observed; unobserved cells are always blocked.
    pub known: Vec<bool>,
}

impl Costmap {
    /// All cells known and free.
    pub fn open(geometry: GridGeometry) -> Self {
        Self { geometry, blocked: vec![false; geometry.len()], known: vec![true; geometry.len()] }
    }

    pub fn from_blocked(geometry: GridGeometry, blocked: Vec<bool>) -> Self {
        assert_eq!(blocked.len(), geometry.len());
        Self { geometry, blocked, known: vec![true; geometry.len()] }
    }

    /// Out-of-grid cells count as blocked.
    pub fn is_blocked(&self, cell: Cell) -> bool {
        !self.geometry.contains(cell) || self.blocked[self.geometry.index(cell)]
    }

    pub fn is_blocked_at(&self, x: f64, y: f64) -> bool {
        self.geometry.cell_of(x, y).is_none_or(|c| self.is_blocked(c))
    }

    pub fn is_known(&self, cell: Cell) -> bool {
        self.geometry.contains(cell) && self.known[self.geometry.index(cell)]
    }

    pub fn set_blocked(&mut self, cell: Cell, blocked: bool) {
        let i = self.geometry.index(cell);
        self.blocked[i] = blocked;
        self.known[i] = true;
    }

    pub fn free_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| !b).count()
    }
}

//! Planar poses and grid coordinates.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// SE(2) pose: position in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub const fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Rotates a body-frame vector into the world frame.
    pub fn body_to_world(&self, vx: f64, vy: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * vx - s * vy, s * vx + c * vy)
    }

    /// Rotates a world-frame vector into the body frame.
    pub fn world_to_body(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * wx + s * wy, -s * wx + c * wy)
    }

    /// Bearing of a world point relative to the heading, in (-pi, pi].
    pub fn bearing_to(&self, x: f64, y: f64) -> f64 {
        wrap_angle((y - self.y).atan2(x - self.x) - self.yaw)
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Integer grid coordinate. Ordering is row-major (`y` first, then `x`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dimensions and metric scale shared by every grid layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
}

impl GridGeometry {
    pub fn new(width: usize, height: usize, cell_size: f64) -> Self {
        Self { width, height, cell_size }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.y * self.width + cell.x
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    /// Cell containing a metric point, or `None` outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<Cell> {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 {
            return None;
        }
        let cx = (x / self.cell_size).floor() as usize;
        let cy = (y / self.cell_size).floor() as usize;
        let cell = Cell::new(cx, cy);
        self.contains(cell).then_some(cell)
    }

    /// Metric center of a cell.
    pub fn center(&self, cell: Cell) -> (f64, f64) {
        (
            (cell.x as f64 + 0.5) * self.cell_size,
            (cell.y as f64 + 0.5) * self.cell_size,
        )
    }

    /// Metric extent of the grid.
    pub fn extent(&self) -> (f64, f64) {
        (self.width as f64 * self.cell_size, self.height as f64 * self.cell_size)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|i| self.cell_at(i))
    }

    /// In-bounds 8-neighbourhood (or 4-neighbourhood) of a cell.
    pub fn neighbors(&self, cell: Cell, diagonal: bool) -> impl Iterator<Item = Cell> + '_ {
        const OFFSETS: [(isize, isize); 8] =
            [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        let n = if diagonal { 8 } else { 4 };
        OFFSETS[..n].iter().filter_map(move |&(dx, dy)| {
            let x = cell.x.checked_add_signed(dx)?;
            let y = cell.y.checked_add_signed(dy)?;
            let c = Cell::new(x, y);
            self.contains(c).then_some(c)
        })
    }
}

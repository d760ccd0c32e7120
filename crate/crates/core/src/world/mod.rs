//! Synthetic terrain: the grid the robot drives on, the per-cell visual
//! features its camera observes, and the weak segmentation of each view.
//!
//! Features are class prototypes plus isotropic Gaussian noise drawn from a
//! counter-based generator keyed on `(seed, frame_id, cell)`, so any frame can
//! be regenerated without replaying earlier draws.

mod features;
mod geometric;
mod segmentation;
mod visibility;
pub mod worldfile;

pub use features::{feature_key, synth_features, synth_features_into};
pub use geometric::geometric_trav;
pub use segmentation::{capture_frame, slic_segment, Segment, SegmentFrame, SegmentationConfig};
pub use visibility::{visible_cells, CameraConfig};
pub use worldfile::{parse_world, Route, WorldFile};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cell, GridGeometry};

/// Default embedding dimension.
pub const DEFAULT_EMBEDDING_DIM: usize = 90;

/// Binarization cut applied to ground-truth traversability.
pub const GT_TRAVERSABLE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainClass {
    pub name: String,
    pub gt_trav: f64,
    pub prototype: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellInfo {
    pub class_id: u16,
    pub gt_trav: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainGrid {
    geometry: GridGeometry,
    cells: Vec<CellInfo>,
    classes: Vec<TerrainClass>,
    noise_sigma: f64,
    seed: u64,
}

impl TerrainGrid {
    /// Creates a grid filled with `background` class at zero elevation.
    pub fn new(
        geometry: GridGeometry,
        classes: Vec<TerrainClass>,
        background: u16,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if geometry.is_empty() {
            return Err(Error::InvalidWorld("grid has no cells".into()));
        }
        if !(geometry.cell_size.is_finite() && geometry.cell_size > 0.0) {
            return Err(Error::InvalidWorld("cell_size must be positive".into()));
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::InvalidWorld("noise_sigma must be >= 0".into()));
        }
        let Some(first) = classes.first() else {
            return Err(Error::InvalidWorld("class table is empty".into()));
        };
        let dim = first.prototype.len();
        if dim == 0 {
            return Err(Error::InvalidWorld("prototypes must be non-empty".into()));
        }
        for c in &classes {
            if c.prototype.len() != dim {
                return Err(Error::InvalidWorld(format!(
                    "class `{}` prototype has dimension {}, expected {dim}",
                    c.name,
                    c.prototype.len()
                )));
            }
            if !(0.0..=1.0).contains(&c.gt_trav) {
                return Err(Error::InvalidWorld(format!(
                    "class `{}` gt_trav {} outside [0, 1]",
                    c.name, c.gt_trav
                )));
            }
            if c.prototype.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidWorld(format!("class `{}` prototype is not finite", c.name)));
            }
        }
        if classes.len() > u16::MAX as usize {
            return Err(Error::InvalidWorld("too many classes".into()));
        }
        let bg = classes
            .get(background as usize)
            .ok_or_else(|| Error::InvalidWorld(format!("background class {background} missing")))?;
        let fill = CellInfo { class_id: background, gt_trav: bg.gt_trav, elevation: 0.0 };
        Ok(Self {
            cells: vec![fill; geometry.len()],
            geometry,
            classes,
            noise_sigma,
            seed,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn cell_size(&self) -> f64 {
        self.geometry.cell_size
    }

    pub fn embedding_dim(&self) -> usize {
        self.classes[0].prototype.len()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn classes(&self) -> &[TerrainClass] {
        &self.classes
    }

    pub fn class_id(&self, name: &str) -> Option<u16> {
        self.classes.iter().position(|c| c.name == name).map(|i| i as u16)
    }

    pub fn cells(&self) -> &[CellInfo] {
        &self.cells
    }

    pub fn info(&self, cell: Cell) -> Result<&CellInfo> {
        self.check(cell)?;
        Ok(&self.cells[self.geometry.index(cell)])
    }

    /// Ground-truth traversability, 0 outside the grid.
    pub fn gt_trav_at(&self, cell: Cell) -> f64 {
        if self.geometry.contains(cell) {
            self.cells[self.geometry.index(cell)].gt_trav
        } else {
            0.0
        }
    }

    /// Ground-truth traversability at a metric point, 0 outside the grid.
    pub fn gt_trav_at_point(&self, x: f64, y: f64) -> f64 {
        self.geometry.cell_of(x, y).map_or(0.0, |c| self.gt_trav_at(c))
    }

    pub fn paint(&mut self, cell: Cell, class_id: u16) -> Result<()> {
        self.check(cell)?;
        let class = self
            .classes
            .get(class_id as usize)
            .ok_or_else(|| Error::InvalidWorld(format!("class {class_id} missing")))?;
        let i = self.geometry.index(cell);
        self.cells[i].class_id = class_id;
        self.cells[i].gt_trav = class.gt_trav;
        Ok(())
    }

    pub fn set_elevation(&mut self, cell: Cell, elevation: f64) -> Result<()> {
        self.check(cell)?;
        let i = self.geometry.index(cell);
        self.cells[i].elevation = elevation;
        Ok(())
    }

    pub fn elevation(&self, cell: Cell) -> f64 {
        self.cells[self.geometry.index(cell)].elevation
    }

    pub fn prototype(&self, class_id: u16) -> &[f64] {
        &self.classes[class_id as usize].prototype
    }

    fn check(&self, cell: Cell) -> Result<()> {
        if self.geometry.contains(cell) {
            Ok(())
        } else {
            Err(Error::OutOfBounds { cell, width: self.width(), height: self.height() })
        }
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Two-class grid: class 0 "ground" (gt 1), class 1 "rock" (gt 0), with
    /// one-hot prototypes of dimension `dim`.
    pub fn two_class_grid(width: usize, height: usize, dim: usize, noise: f64) -> TerrainGrid {
        let proto = |k: usize| (0..dim).map(|e| if e == k { 1.0 } else { 0.0 }).collect();
        let classes = vec![
            TerrainClass { name: "ground".into(), gt_trav: 1.0, prototype: proto(0) },
            TerrainClass { name: "rock".into(), gt_trav: 0.0, prototype: proto(1) },
        ];
        TerrainGrid::new(GridGeometry::new(width, height, 1.0), classes, 0, noise, 42).unwrap()
    }
}

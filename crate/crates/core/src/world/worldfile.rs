//! World description documents.
//!
//! A world file is TOML: grid dimensions, a class table, painted regions
//! applied in order, elevation rules, and optionally a demonstration route,
//! navigation goals and a start pose.
//!
//! ```toml
//! width = 40
//! height = 40
//! cell_size = 0.25
//! noise_sigma = 0.1
//! seed = 7
//! background = "grass"
//!
//! [[class]]
//! name = "grass"
//! gt_trav = 0.7
//! prototype_seed = 11
//!
//! [[region]]
//! shape = "rect"
//! class = "grass"
//! rect = [0.0, 0.0, 2.0, 2.0]
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use super::{TerrainClass, TerrainGrid, DEFAULT_EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::geometry::{Cell, GridGeometry, Pose2};

const MAX_CELLS: usize = 1 << 22;
const MAX_DIM: usize = 4096;
const MAX_SCATTER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub waypoints: Vec<(f64, f64)>,
    pub loops: usize,
    pub start_yaw: f64,
}

impl Route {
    /// Waypoint sequence with loops unrolled.
    pub fn expanded(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.waypoints.len() * self.loops.max(1));
        for _ in 0..self.loops.max(1) {
            out.extend_from_slice(&self.waypoints);
        }
        out
    }

    pub fn start_pose(&self) -> Pose2 {
        let (x, y) = self.waypoints[0];
        Pose2::new(x, y, self.start_yaw)
    }

    /// Length of the unrolled polyline in meters.
    pub fn length(&self) -> f64 {
        let pts = self.expanded();
        pts.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldFile {
    pub name: String,
    pub grid: TerrainGrid,
    pub route: Option<Route>,
    pub goals: Vec<(f64, f64)>,
    pub start: Option<Pose2>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldDoc {
    #[serde(default)]
    name: String,
    width: usize,
    height: usize,
    cell_size: f64,
    #[serde(default = "default_dim")]
    embedding_dim: usize,
    noise_sigma: f64,
    seed: u64,
    background: String,
    #[serde(rename = "class")]
    classes: Vec<ClassDoc>,
    #[serde(default, rename = "region")]
    regions: Vec<RegionDoc>,
    #[serde(default)]
    elevation: Vec<ElevationDoc>,
    route: Option<RouteDoc>,
    #[serde(default)]
    goals: Vec<[f64; 2]>,
    start: Option<[f64; 3]>,
}

fn default_dim() -> usize {
    DEFAULT_EMBEDDING_DIM
}

fn one() -> f64 {
    1.0
}

fn one_loop() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassDoc {
    name: String,
    gt_trav: f64,
    prototype_seed: Option<u64>,
    prototype: Option<Vec<f64>>,
    #[serde(default = "one")]
    prototype_scale: f64,
}

#[derive(Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
enum RegionDoc {
    Rect { class: String, rect: [f64; 4] },
    Disc { class: String, center: [f64; 2], radius: f64 },
    Polyline { class: String, points: Vec<[f64; 2]>, width: f64 },
    Scatter {
        class: String,
        count: usize,
        radius: f64,
        rect: [f64; 4],
        seed: u64,
        #[serde(default)]
        keep: Vec<String>,
    },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ElevationDoc {
    Spikes { class: String, height: f64, density: f64, seed: u64 },
    Ramp { rect: [f64; 4], slope: [f64; 2] },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteDoc {
    waypoints: Vec<[f64; 2]>,
    #[serde(default = "one_loop")]
    loops: usize,
    #[serde(default)]
    start_yaw: f64,
}

pub fn load_world(path: impl AsRef<Path>) -> Result<WorldFile> {
    let text = std::fs::read_to_string(path)?;
    parse_world(&text)
}

pub fn parse_world(text: &str) -> Result<WorldFile> {
    let doc: WorldDoc = toml::from_str(text).map_err(|e| Error::format("world file", e.to_string()))?;
    build(doc)
}

fn finite(vals: &[f64], what: &str) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidWorld(format!("{what} must be finite")))
    }
}

fn build(doc: WorldDoc) -> Result<WorldFile> {
    if doc.width == 0 || doc.height == 0 || doc.width.saturating_mul(doc.height) > MAX_CELLS {
        return Err(Error::InvalidWorld(format!("unsupported grid size {}x{}", doc.width, doc.height)));
    }
    if doc.embedding_dim == 0 || doc.embedding_dim > MAX_DIM {
        return Err(Error::InvalidWorld(format!("unsupported embedding_dim {}", doc.embedding_dim)));
    }
    let mut classes = Vec::with_capacity(doc.classes.len());
    for c in &doc.classes {
        let prototype = match (&c.prototype, c.prototype_seed) {
            (Some(v), None) => v.clone(),
            (None, Some(seed)) => {
                finite(&[c.prototype_scale], "prototype_scale")?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..doc.embedding_dim)
                    .map(|_| c.prototype_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
            _ => {
                return Err(Error::InvalidWorld(format!(
                    "class `{}` needs exactly one of prototype or prototype_seed",
                    c.name
                )))
            }
        };
        if classes.iter().any(|k: &TerrainClass| k.name == c.name) {
            return Err(Error::InvalidWorld(format!("duplicate class `{}`", c.name)));
        }
        classes.push(TerrainClass { name: c.name.clone(), gt_trav: c.gt_trav, prototype });
    }
    let class_of = |name: &str| -> Result<u16> {
        classes
            .iter()
            .position(|c| c.name == name)
            .map(|i| i as u16)
            .ok_or_else(|| Error::InvalidWorld(format!("unknown class `{name}`")))
    };
    let background = class_of(&doc.background)?;
    let geom = GridGeometry::new(doc.width, doc.height, doc.cell_size);
    let mut grid = TerrainGrid::new(geom, classes.clone(), background, doc.noise_sigma, doc.seed)?;

    for region in &doc.regions {
        paint_region(&mut grid, region, &class_of)?;
    }
    for rule in &doc.elevation {
        apply_elevation(&mut grid, rule, &class_of)?;
    }

    let route = match doc.route {
        Some(r) => {
            if r.waypoints.is_empty() {
                return Err(Error::InvalidWorld("route has no waypoints".into()));
            }
            if r.loops == 0 || r.loops > 1000 {
                return Err(Error::InvalidWorld("route loops must be in 1..=1000".into()));
            }
            let flat: Vec<f64> = r.waypoints.iter().flatten().copied().chain([r.start_yaw]).collect();
            finite(&flat, "route")?;
            Some(Route {
                waypoints: r.waypoints.iter().map(|p| (p[0], p[1])).collect(),
                loops: r.loops,
                start_yaw: r.start_yaw,
            })
        }
        None => None,
    };
    finite(&doc.goals.iter().flatten().copied().collect::<Vec<_>>(), "goals")?;
    if let Some(s) = doc.start {
        finite(&s, "start")?;
    }
    Ok(WorldFile {
        name: doc.name,
        grid,
        route,
        goals: doc.goals.iter().map(|g| (g[0], g[1])).collect(),
        start: doc.start.map(|s| Pose2::new(s[0], s[1], s[2])),
    })
}

/// Cells whose centers fall inside the metric rectangle `[x0, y0, x1, y1]`.
fn rect_cells(geom: &GridGeometry, rect: [f64; 4]) -> Vec<Cell> {
    let [x0, y0, x1, y1] = rect;
    geom.cells()
        .filter(|c| {
            let (cx, cy) = geom.center(*c);
            cx >= x0.min(x1) && cx <= x0.max(x1) && cy >= y0.min(y1) && cy <= y0.max(y1)
        })
        .collect()
}

fn disc_cells(geom: &GridGeometry, center: [f64; 2], radius: f64) -> Vec<Cell> {
    geom.cells()
        .filter(|c| {
            let (cx, cy) = geom.center(*c);
            (cx - center[0]).hypot(cy - center[1]) <= radius
        })
        .collect()
}

fn segment_distance(p: (f64, f64), a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a[0]) * dx + (p.1 - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a[0] - t * dx).hypot(p.1 - a[1] - t * dy)
}

fn paint_region(
    grid: &mut TerrainGrid,
    region: &RegionDoc,
    class_of: &dyn Fn(&str) -> Result<u16>,
) -> Result<()> {
    let geom = *grid.geometry();
    let (class, cells) = match region {
        RegionDoc::Rect { class, rect } => {
            finite(rect, "rect")?;
            (class, rect_cells(&geom, *rect))
        }
        RegionDoc::Disc { class, center, radius } => {
            finite(&[center[0], center[1], *radius], "disc")?;
            (class, disc_cells(&geom, *center, *radius))
        }
        RegionDoc::Polyline { class, points, width } => {
            finite(&points.iter().flatten().copied().chain([*width]).collect::<Vec<_>>(), "polyline")?;
            let half = width / 2.0;
            let cells = geom
                .cells()
                .filter(|c| {
                    let p = geom.center(*c);
                    match points.len() {
                        0 => false,
                        1 => segment_distance(p, points[0], points[0]) <= half,
                        _ => points.windows(2).any(|w| segment_distance(p, w[0], w[1]) <= half),
                    }
                })
                .collect();
            (class, cells)
        }
        RegionDoc::Scatter { class, count, radius, rect, seed, keep } => {
            finite(&[rect[0], rect[1], rect[2], rect[3], *radius], "scatter")?;
            if *count > MAX_SCATTER {
                return Err(Error::InvalidWorld(format!("scatter count {count} too large")));
            }
            let keep: Vec<u16> = keep.iter().map(|k| class_of(k)).collect::<Result<_>>()?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let [x0, y0, x1, y1] = *rect;
            let mut cells = Vec::new();
            for _ in 0..*count {
                let cx = x0 + (x1 - x0) * rng.random::<f64>();
                let cy = y0 + (y1 - y0) * rng.random::<f64>();
                cells.extend(
                    disc_cells(&geom, [cx, cy], *radius)
                        .into_iter()
                        .filter(|c| !keep.contains(&grid.cells()[geom.index(*c)].class_id)),
                );
            }
            (class, cells)
        }
    };
    let id = class_of(class)?;
    for c in cells {
        grid.paint(c, id)?;
    }
    Ok(())
}

fn apply_elevation(
    grid: &mut TerrainGrid,
    rule: &ElevationDoc,
    class_of: &dyn Fn(&str) -> Result<u16>,
) -> Result<()> {
    let geom = *grid.geometry();
    match rule {
        ElevationDoc::Spikes { class, height, density, seed } => {
            finite(&[*height, *density], "spikes")?;
            let id = class_of(class)?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for cell in geom.cells() {
                let roll: f64 = rng.random();
                if grid.cells()[geom.index(cell)].class_id == id && roll < *density {
                    let z = grid.elevation(cell) + height;
                    grid.set_elevation(cell, z)?;
                }
            }
        }
        ElevationDoc::Ramp { rect, slope } => {
            finite(&[rect[0], rect[1], rect[2], rect[3], slope[0], slope[1]], "ramp")?;
            for cell in rect_cells(&geom, *rect) {
                let (cx, cy) = geom.center(cell);
                let z = grid.elevation(cell)
                    + slope[0] * (cx - rect[0].min(rect[2]))
                    + slope[1] * (cy - rect[1].min(rect[3]));
                grid.set_elevation(cell, z)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "tiny"
width = 8
height = 6
cell_size = 0.5
embedding_dim = 3
noise_sigma = 0.0
seed = 1
background = "grass"
goals = [[3.5, 2.5]]
start = [1.0, 1.0, 0.0]

[[class]]
name = "grass"
gt_trav = 0.8
prototype = [1.0, 0.0, 0.0]

[[class]]
name = "rock"
gt_trav = 0.0
prototype_seed = 5

[[region]]
shape = "rect"
class = "rock"
rect = [0.0, 0.0, 1.0, 1.0]

[[region]]
shape = "polyline"
class = "grass"
points = [[0.0, 0.25], [4.0, 0.25]]
width = 0.3

[[elevation]]
kind = "ramp"
rect = [2.0, 0.0, 4.0, 3.0]
slope = [0.5, 0.0]

[route]
waypoints = [[1.0, 1.0], [3.0, 1.0]]
loops = 2
"#;

    #[test]
    fn parses_small_world() {
        let w = parse_world(SMALL).unwrap();
        assert_eq!(w.name, "tiny");
        let g = &w.grid;
        assert_eq!((g.width(), g.height(), g.embedding_dim()), (8, 6, 3));
        // Rock rect covers centers (0.25..0.75, 0.25..0.75), then the
        // polyline repaints row y=0 back to grass.
        assert_eq!(g.class_id("rock"), Some(1));
        assert_eq!(g.info(Cell::new(0, 1)).unwrap().class_id, 1);
        assert_eq!(g.info(Cell::new(1, 1)).unwrap().class_id, 1);
        assert_eq!(g.info(Cell::new(0, 0)).unwrap().class_id, 0);
        assert_eq!(g.info(Cell::new(2, 2)).unwrap().class_id, 0);
        assert!((g.elevation(Cell::new(5, 1)) - 0.5 * 0.75).abs() < 1e-12);
        let route = w.route.unwrap();
        assert_eq!(route.expanded().len(), 4);
        assert!((route.length() - 6.0).abs() < 1e-12);
        assert_eq!(w.goals, vec![(3.5, 2.5)]);
    }

    #[test]
    fn rejects_unknown_class_and_fields() {
        let bad = SMALL.replace("class = \"rock\"\nrect", "class = \"lava\"\nrect");
        assert!(matches!(parse_world(&bad), Err(Error::InvalidWorld(_))));
        let bad = SMALL.replace("seed = 1", "seed = 1\nbogus = 3");
        assert!(matches!(parse_world(&bad), Err(Error::Format { .. })));
        let bad = SMALL.replace("width = 8", "width = 0");
        assert!(parse_world(&bad).is_err());
    }

    #[test]
    fn prototype_seed_is_reproducible() {
        let a = parse_world(SMALL).unwrap();
        let b = parse_world(SMALL).unwrap();
        assert_eq!(a.grid.prototype(1), b.grid.prototype(1));
        assert_eq!(a.grid.prototype(1).len(), 3);
    }
}

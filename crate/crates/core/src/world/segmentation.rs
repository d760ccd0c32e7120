//! Weak over-segmentation of a view: k-means over `(w_spatial * xy, feature)`
//! with grid-seeded centers and a fixed iteration count, absorption of
//! undersized clusters into their most similar neighbour, and per-segment
//! feature averaging.

use serde::{Deserialize, Serialize};

use super::{synth_features_into, visible_cells, CameraConfig, TerrainGrid};
use crate::error::Result;
use crate::geometry::{Cell, GridGeometry, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub n_segments: usize,
    /// Scale applied to metric positions; `None` means `0.5 / cell_size`.
    pub w_spatial: Option<f64>,
    pub iters: usize,
    /// Minimum cells per segment. Caps the cluster count at `cells / min_cells`
    /// and merges smaller clusters into a neighbour, as SLIC does after its
    /// k-means. 1 disables both.
    pub min_cells: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { n_segments: 100, w_spatial: None, iters: 10, min_cells: 1 }
    }
}

impl SegmentationConfig {
    pub fn spatial_weight(&self, cell_size: f64) -> f64 {
        self.w_spatial.unwrap_or(0.5 / cell_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub cells: Vec<Cell>,
    pub embedding: Vec<f64>,
    /// Supervision score; `None` until a footprint is reprojected onto it.
    pub label: Option<f64>,
}

impl Segment {
    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }
}

/// One camera view: the visible cells grouped into segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFrame {
    pub frame_id: u64,
    pub pose: Pose2,
    pub segments: Vec<Segment>,
}

impl SegmentFrame {
    pub fn cell_count(&self) -> usize {
        self.segments.iter().map(|s| s.cells.len()).sum()
    }

    pub fn has_label(&self) -> bool {
        self.segments.iter().any(Segment::is_labeled)
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.segments.first().map(|s| s.embedding.len())
    }
}

/// Observes the terrain from `pose`: visible cells, their features, and the
/// segmentation.
pub fn capture_frame(
    grid: &TerrainGrid,
    pose: Pose2,
    frame_id: u64,
    camera: &CameraConfig,
    seg: &SegmentationConfig,
) -> Result<SegmentFrame> {
    let cells = visible_cells(grid.geometry(), &pose, camera.fov_deg, camera.range_m);
    let dim = grid.embedding_dim();
    let mut features = vec![0.0; cells.len() * dim];
    for (cell, chunk) in cells.iter().zip(features.chunks_exact_mut(dim)) {
        synth_features_into(grid, *cell, frame_id, chunk)?;
    }
    let segments = slic_segment(grid.geometry(), &cells, &features, dim, seg);
    Ok(SegmentFrame { frame_id, pose, segments })
}

/// Segments `cells` (row-major features, `dim` per cell). Empty clusters are
/// dropped, so at most `n_segments` segments are returned. Segments are
/// ordered by their first member cell.
pub fn slic_segment(
    geom: &GridGeometry,
    cells: &[Cell],
    features: &[f64],
    dim: usize,
    cfg: &SegmentationConfig,
) -> Vec<Segment> {
    let n = cells.len();
    assert_eq!(features.len(), n * dim, "feature buffer does not match cell count");
    if n == 0 {
        return Vec::new();
    }
    let min_cells = cfg.min_cells.max(1);
    let k = cfg.n_segments.max(1).min((n / min_cells).max(1));
    let w = cfg.spatial_weight(geom.cell_size);
    let pos: Vec<(f64, f64)> = cells
        .iter()
        .map(|c| {
            let (x, y) = geom.center(*c);
            (w * x, w * y)
        })
        .collect();

    let assignment = if k == n {
        (0..n).collect::<Vec<_>>()
    } else {
        let seeds = grid_seeds(cells, k);
        let mut assign = kmeans(&pos, features, dim, &seeds, cfg.iters);
        absorb_small(geom, cells, features, dim, &mut assign, min_cells);
        assign
    };
    build_segments(cells, features, dim, &assignment)
}

/// Picks `k` distinct seed indices laid out on a regular lattice over the
/// bounding box of the cells, each snapped to the nearest cell.
fn grid_seeds(cells: &[Cell], k: usize) -> Vec<usize> {
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for c in cells {
        x0 = x0.min(c.x);
        x1 = x1.max(c.x);
        y0 = y0.min(c.y);
        y1 = y1.max(c.y);
    }
    let w = (x1 - x0 + 1) as f64;
    let h = (y1 - y0 + 1) as f64;
    let gx = ((k as f64 * w / h).sqrt().round() as usize).clamp(1, k);
    let gy = k.div_ceil(gx);
    let total = gx * gy;

    let mut points = Vec::with_capacity(total);
    for j in 0..gy {
        for i in 0..gx {
            let px = x0 as f64 + (i as f64 + 0.5) * w / gx as f64 - 0.5;
            let py = y0 as f64 + (j as f64 + 0.5) * h / gy as f64 - 0.5;
            points.push((px, py));
        }
    }
    // Thin the lattice evenly down to k points.
    let chosen: Vec<(f64, f64)> = (0..k).map(|i| points[i * total / k]).collect();

    let mut used = vec![false; cells.len()];
    let mut seeds = Vec::with_capacity(k);
    for (px, py) in chosen {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (idx, c) in cells.iter().enumerate() {
            if used[idx] {
                continue;
            }
            let d = (c.x as f64 - px).powi(2) + (c.y as f64 - py).powi(2);
            if d < best_d {
                best_d = d;
                best = Some(idx);
            }
        }
        if let Some(idx) = best {
            used[idx] = true;
            seeds.push(idx);
        }
    }
    seeds
}

fn kmeans(
    pos: &[(f64, f64)],
    features: &[f64],
    dim: usize,
    seeds: &[usize],
    iters: usize,
) -> Vec<usize> {
    let n = pos.len();
    let k = seeds.len();
    let mut c_pos: Vec<(f64, f64)> = seeds.iter().map(|&i| pos[i]).collect();
    let mut c_feat: Vec<f64> = seeds
        .iter()
        .flat_map(|&i| features[i * dim..(i + 1) * dim].iter().copied())
        .collect();
    let mut assign = vec![0usize; n];

    for _ in 0..iters.max(1) {
        for i in 0..n {
            let (px, py) = pos[i];
            let f = &features[i * dim..(i + 1) * dim];
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let (cx, cy) = c_pos[j];
                let mut d = (px - cx).powi(2) + (py - cy).powi(2);
                if d >= best_d {
                    continue;
                }
                // Partial distances are monotone, so stop once it cannot win.
                let cf = &c_feat[j * dim..(j + 1) * dim];
                for (a, b) in f.iter().zip(cf) {
                    d += (a - b) * (a - b);
                    if d >= best_d {
                        break;
                    }
                }
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assign[i] = best;
        }

        let mut counts = vec![0usize; k];
        let mut sum_pos = vec![(0.0, 0.0); k];
        let mut sum_feat = vec![0.0; k * dim];
        for i in 0..n {
            let j = assign[i];
            counts[j] += 1;
            sum_pos[j].0 += pos[i].0;
            sum_pos[j].1 += pos[i].1;
            for (s, v) in sum_feat[j * dim..(j + 1) * dim].iter_mut().zip(&features[i * dim..(i + 1) * dim]) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            c_pos[j] = (sum_pos[j].0 * inv, sum_pos[j].1 * inv);
            for (c, s) in c_feat[j * dim..(j + 1) * dim].iter_mut().zip(&sum_feat[j * dim..(j + 1) * dim]) {
                *c = s * inv;
            }
        }
    }
    assign
}

/// Repeatedly merges the smallest cluster below `min_size` into the
/// 4-adjacent cluster with the closest mean feature (any cluster if none is
/// adjacent). Stops when every cluster is large enough or one remains.
fn absorb_small(
    geom: &GridGeometry,
    cells: &[Cell],
    features: &[f64],
    dim: usize,
    assign: &mut [usize],
    min_size: usize,
) {
    if min_size <= 1 {
        return;
    }
    let k = assign.iter().max().map_or(0, |m| m + 1);
    let mut lookup = vec![usize::MAX; geom.len()];
    for (i, c) in cells.iter().enumerate() {
        lookup[geom.index(*c)] = i;
    }
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k * dim];
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(&features[i * dim..(i + 1) * dim]) {
            *s += v;
        }
    }
    let mean_dist = |sums: &[f64], counts: &[usize], a: usize, b: usize| -> f64 {
        let (ia, ib) = (1.0 / counts[a] as f64, 1.0 / counts[b] as f64);
        (0..dim).map(|e| (sums[a * dim + e] * ia - sums[b * dim + e] * ib).powi(2)).sum()
    };

    loop {
        let alive = counts.iter().filter(|&&c| c > 0).count();
        let Some(small) = (0..k).filter(|&j| counts[j] > 0 && counts[j] < min_size).min_by_key(|&j| (counts[j], j)) else {
            return;
        };
        if alive < 2 {
            return;
        }
        let mut neighbours = vec![false; k];
        for (i, c) in cells.iter().enumerate() {
            if assign[i] != small {
                continue;
            }
            let (x, y) = (c.x as isize, c.y as isize);
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let n = Cell::new((x + dx).max(0) as usize, (y + dy).max(0) as usize);
                if (x + dx) < 0 || (y + dy) < 0 || !geom.contains(n) {
                    continue;
                }
                let j = lookup[geom.index(n)];
                if j != usize::MAX && assign[j] != small {
                    neighbours[assign[j]] = true;
                }
            }
        }
        let any_adjacent = neighbours.iter().any(|&b| b);
        let target = (0..k)
            .filter(|&j| j != small && counts[j] > 0 && (!any_adjacent || neighbours[j]))
            .min_by(|&a, &b| mean_dist(&sums, &counts, small, a).total_cmp(&mean_dist(&sums, &counts, small, b)))
            .expect("at least two clusters remain");
        for a in assign.iter_mut().filter(|a| **a == small) {
            *a = target;
        }
        counts[target] += counts[small];
        counts[small] = 0;
        for e in 0..dim {
            sums[target * dim + e] += sums[small * dim + e];
            sums[small * dim + e] = 0.0;
        }
    }
}

fn build_segments(cells: &[Cell], features: &[f64], dim: usize, assignment: &[usize]) -> Vec<Segment> {
    // Cells arrive row-major, so first-appearance order is first-member order.
    let mut order: Vec<Option<usize>> = vec![None; assignment.iter().max().map_or(0, |m| m + 1)];
    let mut segments: Vec<Segment> = Vec::new();
    for (i, &a) in assignment.iter().enumerate() {
        let sid = *order[a].get_or_insert_with(|| {
            segments.push(Segment {
                id: segments.len(),
                cells: Vec::new(),
                embedding: vec![0.0; dim],
                label: None,
            });
            segments.len() - 1
        });
        let seg = &mut segments[sid];
        seg.cells.push(cells[i]);
        for (e, v) in seg.embedding.iter_mut().zip(&features[i * dim..(i + 1) * dim]) {
            *e += v;
        }
    }
    for seg in &mut segments {
        let inv = 1.0 / seg.cells.len() as f64;
        seg.embedding.iter_mut().for_each(|e| *e *= inv);
    }
    segments
}

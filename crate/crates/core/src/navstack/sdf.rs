//! Exact Euclidean distance transform (lower envelope of parabolas, one pass
//! per axis) over squared cell distances.

use super::Costmap;
use crate::geometry::{Cell, GridGeometry};

/// Distance in metres from each cell centre to the nearest blocked cell
/// centre. Zero on blocked cells, `+inf` everywhere if nothing is blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub geometry: GridGeometry,
    pub dist: Vec<f64>,
}

impl SdfGrid {
    /// Out-of-grid cells report zero clearance.
    pub fn at(&self, cell: Cell) -> f64 {
        if self.geometry.contains(cell) {
            self.dist[self.geometry.index(cell)]
        } else {
            0.0
        }
    }

    pub fn at_point(&self, x: f64, y: f64) -> f64 {
        self.geometry.cell_of(x, y).map_or(0.0, |c| self.at(c))
    }

    /// Central-difference gradient in metres per metre, one-sided at the
    /// border. Infinite samples contribute nothing.
    pub fn gradient(&self, cell: Cell) -> (f64, f64) {
        let g = &self.geometry;
        let here = self.at(cell);
        let sample = |dx: isize, dy: isize| -> Option<f64> {
            let c = Cell::new(cell.x.checked_add_signed(dx)?, cell.y.checked_add_signed(dy)?);
            g.contains(c).then(|| self.at(c)).filter(|v| v.is_finite())
        };
        let axis = |minus: Option<f64>, plus: Option<f64>| -> f64 {
            match (minus, plus, here.is_finite()) {
                (Some(a), Some(b), _) => (b - a) / (2.0 * g.cell_size),
                (None, Some(b), true) => (b - here) / g.cell_size,
                (Some(a), None, true) => (here - a) / g.cell_size,
                _ => 0.0,
            }
        };
        (axis(sample(-1, 0), sample(1, 0)), axis(sample(0, -1), sample(0, 1)))
    }

    pub fn max_finite(&self) -> f64 {
        self.dist.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max)
    }
}

/// Squared distance transform of one line. `f[i]` is `Some(cost)` at sites and
/// `None` elsewhere; lines without sites yield `None` everywhere.
fn dt1d(f: &[Option<f64>], out: &mut [Option<f64>], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, fq) in f.iter().enumerate() {
        let Some(fq) = *fq else { continue };
        let qf = q as f64;
        while let Some(&p) = v.last() {
            let fp = f[p].unwrap();
            let pf = p as f64;
            let s = ((fq + qf * qf) - (fp + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = None);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < v.len() && z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *o = Some((qf - p) * (qf - p) + f[v[k]].unwrap());
    }
}

pub fn sdf(costmap: &Costmap) -> SdfGrid {
    let g = costmap.geometry;
    let (w, h) = (g.width, g.height);
    let mut grid: Vec<Option<f64>> = costmap.blocked.iter().map(|&b| b.then_some(0.0)).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());

    let mut line = vec![None; h];
    let mut out = vec![None; h];
    for x in 0..w {
        for y in 0..h {
            line[y] = grid[y * w + x];
        }
        dt1d(&line, &mut out, &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    let mut out = vec![None; w];
    for y in 0..h {
        let row = &grid[y * w..(y + 1) * w];
        dt1d(row, &mut out, &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out);
    }
    let dist = grid.into_iter().map(|d| d.map_or(f64::INFINITY, |d2| d2.sqrt() * g.cell_size)).collect();
    SdfGrid { geometry: g, dist }
}

/// Minimum over all blocked cells, for testing.
pub fn brute_force_sdf(costmap: &Costmap) -> SdfGrid {
    let g = costmap.geometry;
    let blocked: Vec<Cell> = g.cells().filter(|&c| costmap.blocked[g.index(c)]).collect();
    let dist = g
        .cells()
        .map(|c| {
            blocked
                .iter()
                .map(|b| {
                    let dx = c.x.abs_diff(b.x) as u64;
                    let dy = c.y.abs_diff(b.y) as u64;
                    ((dx * dx + dy * dy) as f64).sqrt() * g.cell_size
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    SdfGrid { geometry: g, dist }
}

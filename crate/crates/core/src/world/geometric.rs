use super::TerrainGrid;

/// Height/slope heuristic: `1 - clamp(max |Δz| to 4-neighbours / cell_size / slope_max, 0, 1)`.
pub fn geometric_trav(grid: &TerrainGrid, slope_max: f64) -> Vec<f64> {
    let geom = grid.geometry();
    geom.cells()
        .map(|cell| {
            let z = grid.elevation(cell);
            let steepest = geom
                .neighbors(cell, false)
                .map(|n| (grid.elevation(n) - z).abs())
                .fold(0.0, f64::max);
            1.0 - (steepest / geom.cell_size / slope_max).clamp(0.0, 1.0)
        })
        .collect()
}

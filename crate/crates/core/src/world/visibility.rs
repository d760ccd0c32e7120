use serde::{Deserialize, Serialize};

use crate::geometry::{Cell, GridGeometry, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub fov_deg: f64,
    pub range_m: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { fov_deg: 90.0, range_m: 4.0 }
    }
}

/// Cells whose centers lie within `range_m` of the pose and within
/// `±fov_deg/2` of its heading, plus the cell under the robot. Sorted
/// row-major.
pub fn visible_cells(geom: &GridGeometry, pose: &Pose2, fov_deg: f64, range_m: f64) -> Vec<Cell> {
    let half_fov = fov_deg.to_radians() / 2.0;
    let cs = geom.cell_size;
    let lo = |v: f64| ((v - range_m) / cs).floor().max(0.0) as usize;
    let hi = |v: f64, n: usize| (((v + range_m) / cs).ceil().max(0.0) as usize).min(n);
    let (x0, x1) = (lo(pose.x), hi(pose.x, geom.width));
    let (y0, y1) = (lo(pose.y), hi(pose.y, geom.height));
    let own = geom.cell_of(pose.x, pose.y);

    let mut out = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let cell = Cell::new(x, y);
            let (cx, cy) = geom.center(cell);
            let d = (cx - pose.x).hypot(cy - pose.y);
            let inside = Some(cell) == own
                || (d <= range_m && (fov_deg >= 360.0 || pose.bearing_to(cx, cy).abs() <= half_fov));
            if inside {
                out.push(cell);
            }
        }
    }
    out
}

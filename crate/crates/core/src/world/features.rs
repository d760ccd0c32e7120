use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::TerrainGrid;
use crate::error::{Error, Result};
use crate::geometry::Cell;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter key for the noise stream of one cell in one frame.
pub fn feature_key(seed: u64, frame_id: u64, cell: Cell) -> u64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ frame_id);
    h = splitmix(h ^ cell.x as u64);
    splitmix(h ^ ((cell.y as u64) << 32 | 0x5bd1))
}

/// Feature vector observed for `cell` in frame `frame_id`.
pub fn synth_features(grid: &TerrainGrid, cell: Cell, frame_id: u64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.embedding_dim()];
    synth_features_into(grid, cell, frame_id, &mut out)?;
    Ok(out)
}

pub fn synth_features_into(
    grid: &TerrainGrid,
    cell: Cell,
    frame_id: u64,
    out: &mut [f64],
) -> Result<()> {
    let info = grid.info(cell)?;
    let proto = grid.prototype(info.class_id);
    if out.len() != proto.len() {
        return Err(Error::DimensionMismatch { expected: proto.len(), got: out.len() });
    }
    let sigma = grid.noise_sigma();
    if sigma == 0.0 {
        out.copy_from_slice(proto);
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(feature_key(grid.seed(), frame_id, cell));
    for (o, p) in out.iter_mut().zip(proto) {
        let n: f64 = rng.sample(StandardNormal);
        *o = p + sigma * n;
    }
    Ok(())
}

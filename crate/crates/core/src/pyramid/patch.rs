use super::index::{Level, PatchId, PATCH};
use super::synth::Raster;
use crate::error::{Error, Result};

/// Pool factor from a 512 patch to the encoder's 64x64 input.
pub const POOL: usize = 8;
pub const POOLED: usize = PATCH / POOL;

/// The 512x512 view of `id`: the patch footprint area-averaged by the
/// level's scale (40x is a plain native crop).
pub fn read_patch(native: &Raster, id: &PatchId, origin: (usize, usize)) -> Result<Raster> {
    let (y, x, side) = id.footprint(origin);
    if y + side > native.height || x + side > native.width {
        return Err(Error::OutOfRange(alloc::format!(
            "{:?} footprint ({y}, {x}, {side}) outside {}x{} slide",
            id,
            native.height,
            native.width
        )));
    }
    if id.level == Level::X40 {
        return native.crop(y, x, side, side);
    }
    native.block_mean_region(y, x, side, side, id.level.scale())
}

/// 8x average pool of a 512x512 patch.
pub fn pool_patch(patch: &Raster) -> Result<Raster> {
    if patch.height != PATCH || patch.width != PATCH {
        return Err(Error::ShapeMismatch {
            op: "pool_patch",
            lhs: alloc::vec![PATCH, PATCH],
            rhs: alloc::vec![patch.height, patch.width],
        });
    }
    patch.block_mean(POOL)
}

/// Encoder input for `id` read from the 5x-scale raster (native / 8). A
/// pooled pixel at level `r` spans `8 * scale(r)` native pixels, which is
/// `scale(r)` pixels of the 5x raster.
pub fn pooled_from_5x(low: &Raster, id: &PatchId, origin: (usize, usize)) -> Result<Raster> {
    let (y, x, side) = id.footprint(origin);
    let f = id.level.scale(); // 5x-raster pixels per pooled pixel
    let (y, x, side) = (y / POOL, x / POOL, side / POOL);
    if y + side > low.height || x + side > low.width {
        return Err(Error::OutOfRange(alloc::format!(
            "{id:?} outside the {}x{} 5x raster",
            low.height,
            low.width
        )));
    }
    low.block_mean_region(y, x, side, side, f)
}

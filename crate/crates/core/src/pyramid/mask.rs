use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::index::{PatchId, ANCHOR_NATIVE, PATCH};
use super::otsu::{histogram, otsu_threshold, quantize};
use super::synth::Raster;
use crate::error::{Error, Result};
use crate::rng;

/// Native pixels per mask pixel (the mask lives at 5x scale).
pub const MASK_SCALE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TissueMask {
    pub height: usize,
    pub width: usize,
    pub tissue: Vec<bool>,
    pub threshold_level: u8,
}

impl TissueMask {
    pub fn fraction(&self) -> f64 {
        self.tissue.iter().filter(|&&t| t).count() as f64 / self.tissue.len() as f64
    }

    /// Tissue fraction of the mask window `(y, x, side)`, in mask pixels.
    pub fn coverage(&self, y: usize, x: usize, side: usize) -> f64 {
        let mut n = 0usize;
        for r in y..y + side {
            n += self.tissue[r * self.width + x..r * self.width + x + side]
                .iter()
                .filter(|&&t| t)
                .count();
        }
        n as f64 / (side * side) as f64
    }
}

/// Otsu mask of a 5x-scale raster. With `tissue_darker`, pixels whose
/// quantized level is `<=` the threshold are tissue.
pub fn tissue_mask_from_5x(low: &Raster, tissue_darker: bool) -> Result<TissueMask> {
    let hist = histogram(&low.data);
    let t = otsu_threshold(&hist)?;
    let tissue = low
        .data
        .iter()
        .map(|&v| {
            let q = quantize(v);
            if tissue_darker {
                q <= t
            } else {
                q > t
            }
        })
        .collect();
    Ok(TissueMask {
        height: low.height,
        width: low.width,
        tissue,
        threshold_level: t,
    })
}

/// Otsu mask of a native raster, computed at 5x scale.
pub fn tissue_mask(native: &Raster, tissue_darker: bool) -> Result<TissueMask> {
    tissue_mask_from_5x(&native.block_mean(MASK_SCALE)?, tissue_darker)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSample {
    /// anchor ids with their native origins
    pub anchors: Vec<(PatchId, (usize, usize))>,
    /// `n_anchors - anchors.len()`
    pub shortfall: usize,
}

/// Non-overlapping anchors on the 4096-aligned grid whose footprint has
/// tissue fraction `>= min_coverage`, drawn in a seeded random order.
pub fn sample_anchors(
    slide_id: u32,
    mask: &TissueMask,
    n_anchors: usize,
    min_coverage: f64,
    seed: u64,
) -> Result<AnchorSample> {
    if n_anchors == 0 {
        return Err(Error::InvalidArgument("n_anchors must be >= 1".into()));
    }
    let side = PATCH; // anchor side in mask pixels
    let mut qualifying = Vec::new();
    for gy in 0..mask.height / side {
        for gx in 0..mask.width / side {
            if mask.coverage(gy * side, gx * side, side) >= min_coverage {
                qualifying.push((gy * ANCHOR_NATIVE, gx * ANCHOR_NATIVE));
            }
        }
    }
    let mut r = rng::stream(seed, "anchors", slide_id as u64);
    qualifying.shuffle(&mut r);
    qualifying.truncate(n_anchors);
    let shortfall = n_anchors - qualifying.len();
    let anchors = qualifying
        .into_iter()
        .enumerate()
        .map(|(i, o)| (PatchId::anchor(slide_id, i as u32), o))
        .collect();
    Ok(AnchorSample { anchors, shortfall })
}
